import numpy as np
import pytest

from aqis.models import lmg, observable_matrix, qrm
from aqis.oracle import dense_eigensolve, dense_hamiltonian
from aqis.spectrum import (
    block_eigenvalues,
    critical_energy,
    density_of_states,
    doublet_pairing,
    fix_gauge,
    spectral_decomposition,
)


def test_lmg_n2_spectrum():
    dec = spectral_decomposition(lmg(2), 0.0)
    np.testing.assert_allclose(dec.block_energies[0], [-0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(dec.block_energies[1], [-0.5], atol=1e-15)
    assert dec.parity.tolist() == [0, 0, 1]
    assert dec.k.tolist() == [0, 1, 0]
    assert dec.block_energies[0][0] - dec.block_energies[1][0] == 0.0


def test_lmg_n2_unit_coupling():
    e0, e1 = block_eigenvalues(lmg(2), 1.0)
    np.testing.assert_allclose(e0, [-1.28078, 0.78078], atol=1e-5)
    np.testing.assert_allclose(e1, [-0.5], atol=1e-15)


def test_qrm_decoupled_spectrum():
    dec = spectral_decomposition(qrm(100, 40), 0.0)
    E = np.sort(dec.energies)
    n = np.arange(41)
    ref = np.sort(np.concatenate([n - 50.0, n + 50.0]))
    np.testing.assert_allclose(E, ref, atol=1e-12)
    assert E[0] == pytest.approx(-50.0, abs=1e-12)


@pytest.mark.parametrize("model,g", [(lmg(8), 0.5), (lmg(20), 1.25), (qrm(100, 15), 2.0)])
def test_against_dense_oracle(model, g):
    dec = spectral_decomposition(model, g)
    ref, _ = dense_eigensolve(dense_hamiltonian(model, g))
    np.testing.assert_allclose(np.sort(dec.energies), ref, atol=1e-12)
    V = dec.vectors
    np.testing.assert_allclose(V.T @ V, np.eye(model.dim), atol=1e-12)
    H = dense_hamiltonian(model, g)
    assert np.abs(H @ V - V * dec.energies).max() < 1e-11


def test_gauge_is_deterministic():
    dec = spectral_decomposition(lmg(30), 0.3)
    V = dec.vectors
    lead = V[np.abs(V).argmax(axis=0), np.arange(V.shape[1])]
    assert np.all(lead > 0)
    np.testing.assert_array_equal(fix_gauge(-V), V)


def test_flat_index_and_vectors():
    dec = spectral_decomposition(lmg(4), 0.0)
    assert dec.flat_index(0, 1) == dec.sizes[0]
    with pytest.raises(IndexError):
        dec.flat_index(5, 0)
    with pytest.raises(ValueError):
        spectral_decomposition(lmg(4), 0.0, vectors=False).vector(0, 0)


def test_single_doublet_at_n2():
    dec = spectral_decomposition(lmg(2), 0.0)
    d = doublet_pairing(dec, observable_matrix(lmg(2), "Sx"))
    assert len(d) == 1 and d.unpaired == 1
    assert d.gap[0] == 0.0
    assert abs(d.m[0]) == pytest.approx(1.0, abs=1e-14)


def test_doublets_below_critical_energy_are_degenerate():
    model = lmg(100)
    dec = spectral_decomposition(model, 0.0)
    d = doublet_pairing(dec, observable_matrix(model, "Sx"))
    below = 0.5 * (d.E_plus + d.E_minus) < critical_energy(model, 0.0)
    assert np.all(d.degenerate[below])
    assert d.gap[:10].max() < 1e-8
    assert d.leading_degenerate() == 50


def test_normal_phase_has_no_degenerate_doublets():
    model = lmg(300)
    dec = spectral_decomposition(model, 1.25)
    d = doublet_pairing(dec, observable_matrix(model, "Sx"))
    assert d.n_degenerate == 0
    assert critical_energy(model, 1.25) is None


def test_pairing_needs_parity_odd_observable():
    model = lmg(6)
    with pytest.raises(ValueError):
        doublet_pairing(spectral_decomposition(model, 0.0), observable_matrix(model, "Sz"))


def test_critical_energy_values():
    assert critical_energy(lmg(1000), 0.5) == -250.0
    assert critical_energy(lmg(64), 0.0) == 0.0
    assert critical_energy(qrm(100), 2.0) == -50.0


def test_dos_peak_at_lmg_saddle():
    model = lmg(2000)
    dec = spectral_decomposition(model, 0.5, vectors=False)
    dos = density_of_states(dec, 200)
    assert dos.total == pytest.approx(1.0, abs=1e-12)
    peak = dos.probabilities.argmax()
    assert dos.edges[peak] <= critical_energy(model, 0.5) <= dos.edges[peak + 1]


def test_qrm_local_density_peaks_at_critical_energy():
    # at ratio 100 histogram counts are too coarse; the within-sector spacing shows the peak
    model = qrm(100, 1000)
    e = spectral_decomposition(model, 2.0, vectors=False).block_energies[0]
    gaps = np.diff(e)
    i = gaps[: np.searchsorted(e, 20.0)].argmin()
    assert e[i] <= critical_energy(model, 2.0) <= e[i + 1] or abs(0.5 * (e[i] + e[i + 1]) + 50.0) < gaps[i]


def test_dos_rejects_few_bins():
    with pytest.raises(ValueError):
        density_of_states(spectral_decomposition(lmg(10), 0.0, vectors=False), 5)
