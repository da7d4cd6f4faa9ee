"""Symmetric tridiagonal eigensolver.

Eigenvalues come from the implicit QL iteration with Wilkinson shifts,
eigenvectors (when requested) from inverse iteration with
re-orthogonalization inside clusters of close eigenvalues.  Both kernels are
compiled with numba; the QL sweep is O(n^2) per block, which is what makes
eigenvalue-only phase quadrature over thousands of coupling values cheap.
Single eigenvalues picked by index come from Sturm-sequence bisection, O(n)
per step, for when only a handful of levels are needed.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

__all__ = [
    "TridiagonalConvergenceError",
    "eigensolve_tridiagonal",
    "eigenvalues_by_index",
    "tridiagonal_matvec",
]

_MAX_QL_ITER = 60
_EPS = np.finfo(float).eps


class TridiagonalConvergenceError(RuntimeError):
    """QL iteration hit its iteration cap."""


@njit(cache=True, nogil=True)
def _ql_eigenvalues(diag, off):
    # off has length n; off[n-1] is scratch (zero on entry).
    n = diag.shape[0]
    d = diag.copy()
    e = off.copy()
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= 2.220446049250313e-16 * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > 60:
                return d, l
            # Wilkinson shift from the leading 2x2 block
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = 1.0
            c = 1.0
            p = 0.0
            underflow = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return d, -1


@njit(cache=True)
def _solve_shifted(diag, off, lam, rhs, tiny):
    # Solve (T - lam I) x = rhs by Gaussian elimination with partial pivoting.
    n = diag.shape[0]
    a = np.empty(n)  # sub-diagonal of the row being eliminated
    b = np.empty(n)  # diagonal
    c = np.empty(n)  # first super-diagonal
    f = np.zeros(n)  # second super-diagonal (fill-in from pivoting)
    x = rhs.copy()
    for i in range(n):
        b[i] = diag[i] - lam
        c[i] = off[i] if i < n - 1 else 0.0
        a[i] = off[i - 1] if i > 0 else 0.0
    for i in range(n - 1):
        if abs(a[i + 1]) > abs(b[i]):
            # swap rows i and i+1
            t = b[i]
            b[i] = a[i + 1]
            a[i + 1] = t
            t = c[i]
            c[i] = b[i + 1]
            b[i + 1] = t
            t = f[i]
            f[i] = c[i + 1]
            c[i + 1] = t
            t = x[i]
            x[i] = x[i + 1]
            x[i + 1] = t
        if b[i] == 0.0:
            b[i] = tiny
        mult = a[i + 1] / b[i]
        b[i + 1] -= mult * c[i]
        c[i + 1] -= mult * f[i]
        x[i + 1] -= mult * x[i]
    if b[n - 1] == 0.0:
        b[n - 1] = tiny
    x[n - 1] = x[n - 1] / b[n - 1]
    if n > 1:
        x[n - 2] = (x[n - 2] - c[n - 2] * x[n - 1]) / b[n - 2]
    for i in range(n - 3, -1, -1):
        x[i] = (x[i] - c[i] * x[i + 1] - f[i] * x[i + 2]) / b[i]
    return x


@njit(cache=True)
def _inverse_iteration(diag, off, evals, cluster_tol):
    n = diag.shape[0]
    vecs = np.zeros((n, n))
    scale = 0.0
    for i in range(n):
        s = abs(diag[i])
        if i > 0:
            s += abs(off[i - 1])
        if i < n - 1:
            s += abs(off[i])
        if s > scale:
            scale = s
    if scale == 0.0:
        scale = 1.0
    pert = 10.0 * 2.220446049250313e-16 * scale
    start = 0
    for j in range(n):
        if j > 0 and evals[j] - evals[j - 1] > cluster_tol:
            start = j
        lam = evals[j]
        if j > start:
            # keep shifts distinct inside a cluster
            prev = evals[j - 1]
            if lam - prev < pert:
                lam = prev + pert
        # deterministic, non-degenerate start vector
        v = np.empty(n)
        for i in range(n):
            v[i] = 1.0 + 0.1 * math.sin(1.0 + 2.3 * i + 0.7 * j)
        for _ in range(4):
            v = _solve_shifted(diag, off, lam, v, pert)
            for q in range(start, j):
                dot = 0.0
                for i in range(n):
                    dot += vecs[i, q] * v[i]
                for i in range(n):
                    v[i] -= dot * vecs[i, q]
            big = 0.0
            for i in range(n):
                if abs(v[i]) > big:
                    big = abs(v[i])
            for i in range(n):
                v[i] /= big
            nrm = 0.0
            for i in range(n):
                nrm += v[i] * v[i]
            nrm = math.sqrt(nrm)
            for i in range(n):
                v[i] /= nrm
        for i in range(n):
            vecs[i, j] = v[i]
    return vecs


@njit(cache=True, nogil=True)
def _sturm_count(diag, off2, x, pivmin):
    # number of eigenvalues strictly below x
    count = 0
    q = diag[0] - x
    if abs(q) < pivmin:
        q = -pivmin
    if q < 0:
        count += 1
    for i in range(1, diag.shape[0]):
        q = diag[i] - x - off2[i - 1] / q
        if abs(q) < pivmin:
            q = -pivmin
        if q < 0:
            count += 1
    return count


@njit(cache=True, nogil=True)
def _bisect_indices(diag, off, ks):
    n = diag.shape[0]
    off2 = np.empty(max(n - 1, 1))
    lo0 = math.inf
    hi0 = -math.inf
    big = 0.0
    for i in range(n):
        r = 0.0
        if i > 0:
            r += abs(off[i - 1])
        if i < n - 1:
            r += abs(off[i])
            off2[i] = off[i] * off[i]
        lo0 = min(lo0, diag[i] - r)
        hi0 = max(hi0, diag[i] + r)
        big = max(big, abs(diag[i]) + r)
    pivmin = max(big * big, 1.0) * 2.2250738585072014e-308 / 2.220446049250313e-16
    out = np.empty(ks.shape[0])
    for j in range(ks.shape[0]):
        k = ks[j]
        lo = lo0 - 2.220446049250313e-16 * big
        hi = hi0 + 2.220446049250313e-16 * big
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if hi - lo <= 2.220446049250313e-16 * (abs(lo) + abs(hi)) + pivmin:
                break
            if _sturm_count(diag, off2, mid, pivmin) > k:
                hi = mid
            else:
                lo = mid
        out[j] = 0.5 * (lo + hi)
    return out


def eigenvalues_by_index(diag, off, ks):
    """Eigenvalues number ``ks`` (0 = lowest) by Sturm-sequence bisection.

    Accuracy is a few ulps of the matrix norm, comparable to the QL path.
    """
    diag = np.ascontiguousarray(diag, dtype=float)
    off = np.ascontiguousarray(off, dtype=float)
    ks = np.ascontiguousarray(ks, dtype=np.int64)
    n = diag.shape[0]
    if ks.size and (ks.min() < 0 or ks.max() >= n):
        raise ValueError(f"eigenvalue index out of range for block size {n}")
    if n == 1:
        return np.full(ks.size, diag[0])
    return _bisect_indices(diag, off, ks)


@njit(cache=True)
def _tridiag_matvec(diag, off, v, out):
    n = diag.shape[0]
    for i in range(n):
        acc = diag[i] * v[i]
        if i > 0:
            acc += off[i - 1] * v[i - 1]
        if i < n - 1:
            acc += off[i] * v[i + 1]
        out[i] = acc
    return out


def tridiagonal_matvec(diag, off, v):
    """Return ``T @ v`` for the symmetric tridiagonal ``T = (diag, off)``."""
    diag = np.ascontiguousarray(diag, dtype=float)
    off = np.ascontiguousarray(off, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    return _tridiag_matvec(diag, off, v, np.empty_like(v))


def eigensolve_tridiagonal(diag, off, want_vectors=False, context=""):
    """Eigen-decompose a real symmetric tridiagonal matrix.

    Parameters
    ----------
    diag : array_like, shape (n,)
        Main diagonal.
    off : array_like, shape (n-1,)
        Off-diagonal.
    want_vectors : bool
        Also return orthonormal eigenvectors as columns.
    context : str
        Appended to the error message on non-convergence (block size, g).

    Returns
    -------
    evals : ndarray, ascending
    vecs : ndarray or None
    """
    diag = np.ascontiguousarray(diag, dtype=float)
    off = np.ascontiguousarray(off, dtype=float)
    n = diag.shape[0]
    if off.shape[0] != max(n - 1, 0):
        raise ValueError(f"off-diagonal length {off.shape[0]} does not match n-1={n - 1}")
    if n == 0:
        return np.empty(0), (np.empty((0, 0)) if want_vectors else None)
    if not (np.all(np.isfinite(diag)) and np.all(np.isfinite(off))):
        raise ValueError("non-finite tridiagonal entries")
    e = np.zeros(n)
    e[: n - 1] = off
    d, failed = _ql_eigenvalues(diag, e)
    if failed >= 0:
        raise TridiagonalConvergenceError(
            f"QL iteration did not converge for eigenvalue {failed} "
            f"after {_MAX_QL_ITER} sweeps (block size {n}{', ' + context if context else ''})"
        )
    evals = np.sort(d)
    if not want_vectors:
        return evals, None
    scale = float(np.max(np.abs(diag)) + 2 * (np.max(np.abs(off)) if n > 1 else 0.0)) or 1.0
    vecs = _inverse_iteration(diag, off, evals, 1e-3 * scale)
    return evals, vecs
