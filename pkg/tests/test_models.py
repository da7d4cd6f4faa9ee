import numpy as np
import pytest

from aqis.models import ModelSpec, build_parity_blocks, hamiltonian, lmg, observable_matrix, qrm
from aqis.oracle import dense_hamiltonian


def parity_operator(model):
    if model.kind == "LMG":
        return np.diag((-1.0) ** np.arange(model.dim))
    n = np.repeat(np.arange(model.n_max + 1), 2)
    s = np.tile([0, 1], model.n_max + 1)
    return np.diag((-1.0) ** (n + s))


def test_lmg_n2_blocks_at_zero_coupling():
    layout = build_parity_blocks(lmg(2), 0.0)
    np.testing.assert_allclose(layout.block_matrix(0), [[-0.25, -0.25], [-0.25, -0.25]], atol=1e-15)
    np.testing.assert_allclose(layout.block_matrix(1), [[-0.5]], atol=1e-15)
    assert layout.index[0].tolist() == [0, 2]
    assert layout.index[1].tolist() == [1]


@pytest.mark.parametrize("N,g", [(8, 0.5), (9 * 2, 1.3), (40, 0.0)])
def test_lmg_diagonal(N, g):
    H = hamiltonian(lmg(N), g).toarray()
    J = N / 2
    M = np.arange(N + 1) - J
    np.testing.assert_allclose(np.diag(H), -g * M - (J * (J + 1) - M**2) / (2 * N), atol=1e-13)


def test_qrm_off_diagonal_scales_with_photon_number():
    model = qrm(100, n_max=30)
    layout = build_parity_blocks(model, 1.0)
    n = np.arange(1, 31)
    for p in (0, 1):
        np.testing.assert_allclose(layout.off[p], 5.0 * np.sqrt(n), rtol=1e-14)
        assert layout.off[p][0] == pytest.approx(5.0)


@pytest.mark.parametrize("model,g", [(lmg(8), 0.5), (lmg(30), 1.25), (qrm(100, 20), 2.0), (qrm(4, 31), 0.7)])
def test_matches_dense_construction_and_commutes_with_parity(model, g):
    H = hamiltonian(model, g).toarray()
    np.testing.assert_allclose(H, dense_hamiltonian(model, g), atol=1e-12)
    P = parity_operator(model)
    assert np.abs(H @ P - P @ H).max() == 0.0
    layout = build_parity_blocks(model, g)
    np.testing.assert_array_equal(layout.assemble(model.dim), H)


def test_model_validation():
    with pytest.raises(ValueError):
        lmg(3)
    with pytest.raises(ValueError):
        ModelSpec("XY", N=2)
    with pytest.raises(ValueError):
        qrm(-1.0)
    with pytest.raises(ValueError):
        build_parity_blocks(lmg(4), float("nan"))


def test_symmetry_broken_phases():
    assert lmg(10).symmetry_broken(0.5) and not lmg(10).symmetry_broken(1.25)
    assert qrm(100).symmetry_broken(2.0) and not qrm(100).symmetry_broken(0.5)


def test_sx_matrix_elements():
    Sx = observable_matrix(lmg(2), "Sx").dense()
    assert Sx[1, 0] == pytest.approx(np.sqrt(2) / 2, abs=1e-15)
    assert Sx[1, 2] == pytest.approx(np.sqrt(2) / 2, abs=1e-15)


def test_sz_is_diagonal_m():
    Sz = observable_matrix(lmg(6), "Sz").dense()
    np.testing.assert_array_equal(Sz, np.diag(np.arange(7) - 3.0))


def test_observable_parity_flags():
    assert observable_matrix(lmg(4), "Sx").parity_odd
    assert not observable_matrix(lmg(4), "Sz").parity_odd
    assert observable_matrix(qrm(100, 10), "x").parity_odd
    with pytest.raises(ValueError):
        observable_matrix(lmg(4), "x")
