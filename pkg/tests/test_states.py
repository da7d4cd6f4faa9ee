import numpy as np
import pytest

from aqis.models import lmg, observable_matrix, qrm
from aqis.spectrum import critical_energy, doublet_pairing, spectral_decomposition
from aqis.states import (
    LeakageError,
    PureState,
    energy_distribution,
    expand_in_eigenbasis,
    expectation,
    microcanonical_sb,
    observable_distribution,
    qrm_coherent,
    thermal_sb,
    to_physical,
)


@pytest.fixture(scope="module")
def lmg100():
    model = lmg(100)
    dec = spectral_decomposition(model, 0.0)
    return model, dec, doublet_pairing(dec, observable_matrix(model, "Sx"))


def test_single_doublet_order_parameter(lmg100):
    model, dec, d = lmg100
    psi = microcanonical_sb(dec, d, 1)
    assert expectation(psi, observable_matrix(model, "Sx")) == pytest.approx(50.0, abs=1e-9)


def test_microcanonical_energy_weights(lmg100):
    model, dec, d = lmg100
    psi = microcanonical_sb(dec, d, 10)
    pE = energy_distribution(psi, d)
    populated = pE.probabilities[pE.probabilities > 0]
    assert populated.size == 10
    np.testing.assert_allclose(populated, 0.1, atol=1e-14)


def test_microcanonical_one_branch(lmg100):
    model, dec, d = lmg100
    pSx = observable_distribution(microcanonical_sb(dec, d, 10), observable_matrix(model, "Sx"))
    assert pSx.total == pytest.approx(1.0, abs=1e-12)
    assert pSx.probabilities[pSx.support < 0].max() < 1e-6


def test_microcanonical_too_many_doublets(lmg100):
    _, dec, d = lmg100
    with pytest.raises(ValueError):
        microcanonical_sb(dec, d, 51)
    with pytest.raises(ValueError):
        microcanonical_sb(dec, d, 0)


def test_energy_distribution_independent_of_branch(lmg100):
    model, dec, d = lmg100
    psi = microcanonical_sb(dec, d, 7)
    c = psi.coefficients.copy()
    c[dec.sizes[0] :] *= -1
    flipped = PureState(c, model, dec)
    a, b = energy_distribution(psi, d), energy_distribution(flipped, d)
    np.testing.assert_array_equal(a.probabilities, b.probabilities)
    assert expectation(flipped, observable_matrix(model, "Sx")) < 0


def test_thermal_cold_limit(lmg100):
    model, dec, d = lmg100
    rho = thermal_sb(dec, d, 1e3)
    assert rho.weights[0] == pytest.approx(1.0, abs=1e-12)
    assert expectation(rho, observable_matrix(model, "Sx")) == pytest.approx(50.0, abs=1e-6)


def test_thermal_weights_decay_exponentially():
    model = lmg(1000)
    dec = spectral_decomposition(model, 0.0)
    d = doublet_pairing(dec, observable_matrix(model, "Sx"))
    rho = thermal_sb(dec, d, 0.02)
    k = rho.info["k"]
    E = 0.5 * (d.E_plus + d.E_minus)[k]
    np.testing.assert_allclose(np.log(rho.weights / rho.weights[0]), -0.02 * (E - E[0]), atol=1e-9)
    pSx = observable_distribution(rho, observable_matrix(model, "Sx"))
    assert pSx.probabilities[pSx.support < 0].sum() < 1e-6
    assert expectation(rho, observable_matrix(model, "Sx")) > 0
    assert rho.discarded_weight < 1e-3


def test_thermal_leakage_raises():
    # at high temperature non-degenerate doublets above E_c would carry weight
    model = lmg(60)
    dec = spectral_decomposition(model, 0.5)
    d = doublet_pairing(dec, observable_matrix(model, "Sx"))
    with pytest.raises(LeakageError):
        thermal_sb(dec, d, 1e-3)


def test_coherent_state_moments():
    model = qrm(100, 1000)
    psi = qrm_coherent(model, 5.0)
    assert expectation(psi, observable_matrix(model, "x")) == pytest.approx(np.sqrt(2) * 5, abs=1e-4)
    assert expectation(psi, observable_matrix(model, "x")) == pytest.approx(7.0711, abs=1e-4)
    assert expectation(psi, observable_matrix(model, "n_phot")) == pytest.approx(25.0, abs=1e-9)
    assert expectation(psi, observable_matrix(model, "sigmaz")) == pytest.approx(-1.0, abs=1e-12)


def test_coherent_vacuum_energy():
    model = qrm(100, 50)
    psi = qrm_coherent(model, 0.0)
    dec = spectral_decomposition(model, 0.0)
    c = expand_in_eigenbasis(psi, dec)
    E = float(np.dot(c.populations(), dec.energies))
    assert E == pytest.approx(-50.0, abs=1e-12)


def test_dressed_coherent_state_below_critical_energy():
    model = qrm(100, 1000)
    dec = spectral_decomposition(model, 2.0)
    c = expand_in_eigenbasis(qrm_coherent(model, 5.0, g=2.0), dec)
    above = c.populations()[dec.energies > critical_energy(model, 2.0)].sum()
    assert above < 1e-3


def test_coherent_rejects_small_cutoff():
    with pytest.raises(ValueError):
        qrm_coherent(qrm(100, 20), 5.0)


def test_eigenstate_expansion_is_unit_vector():
    model = lmg(20)
    dec = spectral_decomposition(model, 0.4)
    psi = PureState(dec.vector(3, 0), model)
    c = expand_in_eigenbasis(psi, dec).coefficients
    ref = np.zeros(model.dim)
    ref[dec.flat_index(3, 0)] = 1.0
    np.testing.assert_allclose(c, ref, atol=1e-12)


def test_round_trip_and_norm():
    model = lmg(40)
    dec = spectral_decomposition(model, 0.7)
    rng = np.random.default_rng(1)
    v = rng.normal(size=model.dim) + 1j * rng.normal(size=model.dim)
    psi = PureState(v / np.linalg.norm(v), model)
    eig = expand_in_eigenbasis(psi, dec)
    assert eig.norm() == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(to_physical(eig).coefficients, psi.coefficients, atol=1e-10)
    with pytest.raises(ValueError):
        expand_in_eigenbasis(eig, dec)


def test_symmetric_state_has_symmetric_distribution():
    model = lmg(30)
    dec = spectral_decomposition(model, 0.3)
    psi = PureState(dec.vector(2, 1), model)
    p = observable_distribution(psi, observable_matrix(model, "Sx"))
    np.testing.assert_allclose(p.probabilities, p.probabilities[::-1], atol=1e-10)
    np.testing.assert_allclose(p.support, -p.support[::-1], atol=1e-10)
    assert expectation(psi, observable_matrix(model, "Sx")) == pytest.approx(0.0, abs=1e-10)
