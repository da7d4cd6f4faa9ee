"""Model Hamiltonians, their parity blocks, and the observables used as order parameters.

Two parity-symmetric critical models are supported:

* ``LMG``: ``H = -g S_z - S_x^2 / N`` in the maximum-spin Dicke sector
  ``J = N/2``.  Basis index ``i = J + M``; parity ``(-1)^(J+M)``.
* ``QRM``: ``H = (Omega/2) sigma_z + omega a^dag a + g lambda_c (a + a^dag) sigma_x``
  with ``omega = 1`` and ``lambda_c = sqrt(Omega)/2``.  Basis index
  ``i = 2 n + s`` with ``s = 0`` spin down, ``s = 1`` spin up; parity
  ``(-1)^(n + s)``.

Both Hamiltonians are affine in the coupling, ``H(g) = A + g B``, and each
parity block is an unreduced symmetric tridiagonal matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ModelSpec",
    "lmg",
    "qrm",
    "ParityBlockLayout",
    "build_parity_blocks",
    "hamiltonian",
    "ObservableMatrix",
    "observable_matrix",
    "OBSERVABLE_NAMES",
]


@dataclass(frozen=True)
class ModelSpec:
    """Which critical model, and its size parameters.

    ``ratio`` is Omega/omega for the Rabi model (omega is the frequency unit).
    """

    kind: str
    N: int | None = None
    ratio: float | None = None
    n_max: int | None = None

    def __post_init__(self):
        if self.kind == "LMG":
            if self.N is None or int(self.N) != self.N or self.N <= 0 or self.N % 2:
                raise ValueError(f"LMG needs an even positive spin count N, got {self.N!r}")
            object.__setattr__(self, "N", int(self.N))
        elif self.kind == "QRM":
            if self.ratio is None or not (self.ratio > 0 and math.isfinite(self.ratio)):
                raise ValueError(f"QRM needs a positive frequency ratio, got {self.ratio!r}")
            if self.n_max is None or int(self.n_max) != self.n_max or self.n_max <= 0:
                raise ValueError(f"QRM needs a positive Fock cutoff n_max, got {self.n_max!r}")
            object.__setattr__(self, "ratio", float(self.ratio))
            object.__setattr__(self, "n_max", int(self.n_max))
        else:
            raise ValueError(f"unknown model kind {self.kind!r} (expected 'LMG' or 'QRM')")

    @property
    def dim(self) -> int:
        if self.kind == "LMG":
            return self.N + 1
        return 2 * (self.n_max + 1)

    @property
    def J(self) -> float:
        return self.N / 2

    @property
    def lambda_c(self) -> float:
        return math.sqrt(self.ratio) / 2

    @property
    def g_critical(self) -> float:
        return 1.0

    def symmetry_broken(self, g: float) -> bool:
        """True when ``g`` lies in the symmetry-breaking phase."""
        return g < 1.0 if self.kind == "LMG" else g > 1.0

    def label(self) -> str:
        if self.kind == "LMG":
            return f"LMG(N={self.N})"
        return f"QRM(ratio={self.ratio:g}, n_max={self.n_max})"


def lmg(N: int) -> ModelSpec:
    return ModelSpec("LMG", N=N)


def qrm(ratio: float, n_max: int = 1000) -> ModelSpec:
    return ModelSpec("QRM", ratio=ratio, n_max=n_max)


@dataclass(frozen=True)
class ParityBlockLayout:
    """Two symmetric tridiagonal blocks whose direct sum is ``H(g)``.

    ``index[p]`` maps block row ``r`` of parity ``p`` (0 even, 1 odd) to the
    physical basis index.  ``diag[p]`` / ``off[p]`` are the tridiagonal
    entries at the coupling ``g``.
    """

    g: float
    index: tuple
    diag: tuple
    off: tuple

    def block_matrix(self, p: int) -> np.ndarray:
        d, o = self.diag[p], self.off[p]
        return np.diag(d) + np.diag(o, 1) + np.diag(o, -1)

    def assemble(self, dim: int) -> np.ndarray:
        """Scatter both blocks back into a dense physical-basis matrix."""
        H = np.zeros((dim, dim))
        for p in (0, 1):
            idx = self.index[p]
            H[np.ix_(idx, idx)] = self.block_matrix(p)
        return H


@lru_cache(maxsize=None)
def _affine_blocks(model: ModelSpec):
    """Per-parity (index, dA, dB, oA, oB) with ``H(g) = A + g B`` blockwise."""
    out = []
    if model.kind == "LMG":
        N, J = model.N, model.J
        M = np.arange(N + 1) - J
        dA = -(J * (J + 1) - M**2) / (2 * N)
        dB = -M
        Mo = M[:-2]
        o2 = -np.sqrt(J * (J + 1) - Mo * (Mo + 1)) * np.sqrt(J * (J + 1) - (Mo + 1) * (Mo + 2)) / (4 * N)
        idx_all = np.arange(N + 1)
        # J + M = i, so parity (-1)^i; S_x^2 couples i and i+2
        for p in (0, 1):
            idx = idx_all[p::2]
            out.append((idx, dA[idx], dB[idx], o2[idx[:-1]], np.zeros(len(idx) - 1)))
    else:
        n = np.arange(model.n_max + 1, dtype=float)
        half = model.ratio / 2
        off_B = model.lambda_c * np.sqrt(n[1:])
        for p in (0, 1):
            # parity p block: spin s = (n + p) mod 2, sigma_z = 2 s - 1
            s = (np.arange(model.n_max + 1) + p) % 2
            idx = 2 * np.arange(model.n_max + 1) + s
            dA = n + half * (2 * s - 1)
            out.append((idx, dA, np.zeros_like(n), np.zeros(model.n_max), off_B))
    for item in out:
        for arr in item:
            arr.setflags(write=False)
    return tuple(out)


def _check_g(g):
    g = float(g)
    if not math.isfinite(g):
        raise ValueError(f"coupling must be finite, got {g}")
    return g


def build_parity_blocks(model: ModelSpec, g: float) -> ParityBlockLayout:
    """Tridiagonal parity blocks of ``H(g)``."""
    g = _check_g(g)
    blocks = _affine_blocks(model)
    return ParityBlockLayout(
        g=g,
        index=tuple(b[0] for b in blocks),
        diag=tuple(b[1] + g * b[2] for b in blocks),
        off=tuple(b[3] + g * b[4] for b in blocks),
    )


def affine_blocks(model: ModelSpec):
    """Expose ``(index, dA, dB, oA, oB)`` per parity for kernels that vary ``g``."""
    return _affine_blocks(model)


def hamiltonian(model: ModelSpec, g: float) -> sp.csr_matrix:
    """Sparse physical-basis Hamiltonian ``H(g)``."""
    layout = build_parity_blocks(model, g)
    rows, cols, vals = [], [], []
    for p in (0, 1):
        idx = layout.index[p]
        rows += [idx, idx[:-1], idx[1:]]
        cols += [idx, idx[1:], idx[:-1]]
        vals += [layout.diag[p], layout.off[p], layout.off[p]]
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(model.dim, model.dim),
    )
    return H.tocsr()


OBSERVABLE_NAMES = {
    "LMG": ("Sx", "Sz", "Sx2"),
    "QRM": ("x", "n_phot", "sigmaz"),
}

_PARITY_ODD = {"Sx", "x"}


@dataclass(frozen=True, eq=False)
class ObservableMatrix:
    """Real symmetric banded observable in the physical basis."""

    name: str
    model: ModelSpec
    matrix: sp.csr_matrix
    parity_odd: bool
    bandwidth: int

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


@lru_cache(maxsize=None)
def observable_matrix(model: ModelSpec, name: str) -> ObservableMatrix:
    """Build the named observable.

    LMG: ``Sx``, ``Sz``, ``Sx2``.  QRM: ``x = (a + a^dag)/sqrt(2)``,
    ``n_phot = a^dag a``, ``sigmaz``.
    """
    if name not in OBSERVABLE_NAMES[model.kind]:
        raise ValueError(f"observable {name!r} not defined for {model.kind}; choose from {OBSERVABLE_NAMES[model.kind]}")
    dim = model.dim
    if model.kind == "LMG":
        J = model.J
        M = np.arange(dim) - J
        # <M+1|S_+|M> / 2 on the first off-diagonal
        sp_el = np.sqrt(J * (J + 1) - M[:-1] * (M[:-1] + 1)) / 2
        Sx = sp.diags([sp_el, sp_el], [1, -1], shape=(dim, dim), format="csr")
        if name == "Sx":
            mat, band = Sx, 1
        elif name == "Sz":
            mat, band = sp.diags(M, 0, format="csr"), 0
        else:
            mat, band = (Sx @ Sx).tocsr(), 2
    else:
        n_max = model.n_max
        n = np.arange(n_max + 1, dtype=float)
        a_x = sp.diags([np.sqrt(n[1:] / 2), np.sqrt(n[1:] / 2)], [1, -1], shape=(n_max + 1,) * 2)
        eye2 = sp.identity(2)
        if name == "x":
            mat, band = sp.kron(a_x, eye2, format="csr"), 2
        elif name == "n_phot":
            mat, band = sp.kron(sp.diags(n), eye2, format="csr"), 0
        else:
            mat, band = sp.kron(sp.identity(n_max + 1), sp.diags([-1.0, 1.0]), format="csr"), 0
    mat.sort_indices()
    return ObservableMatrix(name=name, model=model, matrix=mat, parity_odd=name in _PARITY_ODD, bandwidth=band)
