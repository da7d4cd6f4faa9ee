import numpy as np
import pytest
from scipy.linalg import eigvalsh_tridiagonal

from aqis.tridiag import (
    TridiagonalConvergenceError,
    eigensolve_tridiagonal,
    eigenvalues_by_index,
    tridiagonal_matvec,
)


def test_one_by_one_block():
    evals, vecs = eigensolve_tridiagonal([-0.5], [], want_vectors=True)
    assert evals.tolist() == [-0.5]
    assert vecs.tolist() == [[1.0]]


def test_lmg_n2_even_block_at_zero_coupling():
    evals, _ = eigensolve_tridiagonal([-0.25, -0.25], [-0.25])
    np.testing.assert_allclose(evals, [-0.5, 0.0], atol=1e-15)


def test_lmg_n2_even_block_at_unit_coupling():
    # diagonal g - 1/4, -g - 1/4 at g = 1
    evals, _ = eigensolve_tridiagonal([0.75, -1.25], [-0.25])
    np.testing.assert_allclose(evals, [-0.25 - np.sqrt(17) / 4, -0.25 + np.sqrt(17) / 4], atol=1e-14)
    np.testing.assert_allclose(evals, [-1.28078, 0.78078], atol=1e-5)


def test_identity():
    evals, vecs = eigensolve_tridiagonal(np.ones(7), np.zeros(6), want_vectors=True)
    assert np.all(evals == 1.0)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(7), atol=1e-14)


@pytest.mark.parametrize("n", [2, 5, 64, 300])
def test_random_blocks_against_lapack(n):
    rng = np.random.default_rng(n)
    d, e = rng.normal(size=n), rng.normal(size=n - 1)
    evals, vecs = eigensolve_tridiagonal(d, e, want_vectors=True)
    ref = eigvalsh_tridiagonal(d, e)
    scale = np.abs(ref).max()
    assert np.abs(evals - ref).max() < 1e-13 * scale * np.sqrt(n)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-12)
    T = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
    assert np.abs(T @ vecs - vecs * evals).max() < 1e-12 * scale * np.sqrt(n)


def test_clustered_eigenvalues_keep_orthogonal_vectors():
    # Wilkinson W21+: pairs of nearly equal eigenvalues
    m = 10
    d = np.abs(np.arange(-m, m + 1)).astype(float)
    e = np.ones(2 * m)
    evals, vecs = eigensolve_tridiagonal(d, e, want_vectors=True)
    np.testing.assert_allclose(evals, eigvalsh_tridiagonal(d, e), atol=1e-13)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(2 * m + 1), atol=1e-10)


def test_bisection_matches_ql():
    rng = np.random.default_rng(7)
    d, e = rng.normal(size=400), rng.normal(size=399)
    full, _ = eigensolve_tridiagonal(d, e)
    ks = np.array([0, 1, 17, 200, 399])
    np.testing.assert_allclose(eigenvalues_by_index(d, e, ks), full[ks], atol=1e-12)
    with pytest.raises(ValueError):
        eigenvalues_by_index(d, e, [400])


def test_matvec():
    rng = np.random.default_rng(3)
    d, e, v = rng.normal(size=6), rng.normal(size=5), rng.normal(size=6)
    T = np.diag(d) + np.diag(e, 1) + np.diag(e, -1)
    np.testing.assert_allclose(tridiagonal_matvec(d, e, v), T @ v, atol=1e-14)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        eigensolve_tridiagonal([1.0, 2.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        eigensolve_tridiagonal([1.0, np.nan], [0.0])
    assert issubclass(TridiagonalConvergenceError, RuntimeError)
