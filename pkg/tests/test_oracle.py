import numpy as np
import pytest

from aqis.models import lmg, qrm
from aqis.oracle import OracleReport, dense_eigensolve, dense_hamiltonian, piecewise_constant_propagate, write_report_csv


def test_jacobi_matches_lapack():
    rng = np.random.default_rng(11)
    A = rng.normal(size=(40, 40))
    A = A + A.T
    w, v = dense_eigensolve(A)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(A), atol=1e-12)
    np.testing.assert_allclose(v.T @ v, np.eye(40), atol=1e-12)
    np.testing.assert_allclose(A @ v, v * w, atol=1e-11)


def test_jacobi_rejects_asymmetric():
    with pytest.raises(ValueError):
        dense_eigensolve(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_dense_lmg_n2():
    H = dense_hamiltonian(lmg(2), 0.0)
    w, _ = dense_eigensolve(H)
    np.testing.assert_allclose(w, [-0.5, -0.5, 0.0], atol=1e-15)


def test_dense_hamiltonian_size_cap():
    with pytest.raises(ValueError):
        dense_hamiltonian(qrm(100, 500), 1.0)


def test_piecewise_propagation_is_unitary_and_composes():
    model = lmg(12)
    rng = np.random.default_rng(2)
    psi = rng.normal(size=model.dim) + 1j * rng.normal(size=model.dim)
    psi /= np.linalg.norm(psi)
    one = piecewise_constant_propagate(psi, model, [0.3, 0.9], [0.0, 1.0, 3.0])
    half = piecewise_constant_propagate(psi, model, [0.3], [0.0, 1.0])
    two = piecewise_constant_propagate(half, model, [0.9], [0.0, 2.0])
    assert np.linalg.norm(one) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(one, two, atol=1e-12)
    with pytest.raises(ValueError):
        piecewise_constant_propagate(psi, model, [0.3, 0.9], [0.0, 1.0])


def test_report_csv(tmp_path):
    reports = [OracleReport("a", 1e-13, 1e-12, ""), OracleReport("b", 2.0, 1.0, "too big")]
    assert reports[0].passed and not reports[1].passed
    write_report_csv(reports, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[2].startswith("b,")
