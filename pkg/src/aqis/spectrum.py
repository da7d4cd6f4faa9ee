"""Parity-resolved spectral decompositions, doublet pairing and ESQPT diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distribution import Distribution
from .models import ModelSpec, ObservableMatrix, build_parity_blocks
from .tridiag import eigensolve_tridiagonal

__all__ = [
    "SpectralDecomposition",
    "spectral_decomposition",
    "block_eigenvalues",
    "DoubletTable",
    "doublet_pairing",
    "density_of_states",
    "critical_energy",
    "fix_gauge",
    "DEGENERACY_FACTOR",
]

# degenerate <=> gap < DEGENERACY_FACTOR * mean level spacing
DEGENERACY_FACTOR = 1e-6
_GAUGE_TIE_RTOL = 1e-9


def fix_gauge(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude component is positive.

    Components within a relative 1e-9 of the maximum count as ties; the lowest
    index among them decides.
    """
    mag = np.abs(vecs)
    top = mag.max(axis=0)
    cand = mag >= top * (1 - _GAUGE_TIE_RTOL)
    first = np.argmax(cand, axis=0)
    signs = np.sign(vecs[first, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenpairs of ``H(g)`` labeled by parity.

    Flat ordering used everywhere: all even-parity levels ascending, then all
    odd-parity levels ascending.  ``vectors`` holds physical-basis eigenvectors
    as columns in that order (``None`` when only eigenvalues were requested).
    """

    model: ModelSpec
    g: float
    block_energies: tuple
    vectors: np.ndarray | None

    @property
    def sizes(self) -> tuple:
        return tuple(len(e) for e in self.block_energies)

    @property
    def energies(self) -> np.ndarray:
        return np.concatenate(self.block_energies)

    @property
    def parity(self) -> np.ndarray:
        n0, n1 = self.sizes
        return np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])

    @property
    def k(self) -> np.ndarray:
        n0, n1 = self.sizes
        return np.concatenate([np.arange(n0), np.arange(n1)])

    def flat_index(self, k: int, parity: int) -> int:
        if not 0 <= k < self.sizes[parity]:
            raise IndexError(f"k={k} outside parity-{parity} sector of size {self.sizes[parity]}")
        return k if parity == 0 else self.sizes[0] + k

    def vector(self, k: int, parity: int) -> np.ndarray:
        if self.vectors is None:
            raise ValueError("decomposition was computed without eigenvectors")
        return self.vectors[:, self.flat_index(k, parity)]

    def mean_level_spacing(self) -> float:
        E = self.energies
        return float((E.max() - E.min()) / max(E.size - 1, 1))


def block_eigenvalues(model: ModelSpec, g: float) -> tuple:
    """Eigenvalues only, per parity block (the cheap path used by phase quadrature)."""
    layout = build_parity_blocks(model, g)
    return tuple(
        eigensolve_tridiagonal(layout.diag[p], layout.off[p], False, context=f"parity {p}, g={g}")[0]
        for p in (0, 1)
    )


def spectral_decomposition(model: ModelSpec, g: float, vectors: bool = True) -> SpectralDecomposition:
    """Parity-labeled, gauge-fixed eigen-decomposition of ``H(g)``."""
    layout = build_parity_blocks(model, g)
    energies = []
    V = np.zeros((model.dim, model.dim)) if vectors else None
    col = 0
    for p in (0, 1):
        e, v = eigensolve_tridiagonal(layout.diag[p], layout.off[p], vectors, context=f"parity {p}, g={g}")
        energies.append(e)
        if vectors:
            full = np.zeros((model.dim, e.size))
            full[layout.index[p], :] = v
            V[:, col : col + e.size] = fix_gauge(full)
        col += e.size
    return SpectralDecomposition(model=model, g=float(g), block_energies=tuple(energies), vectors=V)


@dataclass(frozen=True, eq=False)
class DoubletTable:
    """k-th even level paired with k-th odd level."""

    k: np.ndarray
    E_plus: np.ndarray
    E_minus: np.ndarray
    gap: np.ndarray
    m: np.ndarray
    degenerate: np.ndarray
    threshold: float
    unpaired: int

    def __len__(self):
        return self.k.size

    @property
    def n_degenerate(self) -> int:
        return int(self.degenerate.sum())

    def leading_degenerate(self) -> int:
        """Number of consecutive degenerate doublets starting from k = 0."""
        bad = np.flatnonzero(~self.degenerate)
        return int(bad[0]) if bad.size else len(self)


def doublet_pairing(decomp: SpectralDecomposition, obs: ObservableMatrix) -> DoubletTable:
    """Pair opposite-parity levels by within-sector index and evaluate ``<k,+|O|k,->``.

    Pairs up to the shorter sector; ``unpaired`` reports the remainder.
    """
    if decomp.vectors is None:
        raise ValueError("doublet pairing needs eigenvectors")
    if not obs.parity_odd:
        raise ValueError(f"doublet matrix elements need a parity-odd observable, got {obs.name!r}")
    n0, n1 = decomp.sizes
    n = min(n0, n1)
    Ep, Em = decomp.block_energies[0][:n], decomp.block_energies[1][:n]
    Vp = decomp.vectors[:, :n]
    Vm = decomp.vectors[:, n0 : n0 + n]
    m = np.einsum("ik,ik->k", Vp, obs.matrix @ Vm)
    gap = np.abs(Ep - Em)
    thr = DEGENERACY_FACTOR * decomp.mean_level_spacing()
    return DoubletTable(
        k=np.arange(n),
        E_plus=Ep,
        E_minus=Em,
        gap=gap,
        m=m,
        degenerate=gap < thr,
        threshold=thr,
        unpaired=abs(n0 - n1),
    )


def density_of_states(decomp: SpectralDecomposition, bin_count: int, energy_range=None) -> Distribution:
    """Normalized histogram of all eigenvalues (bin centers as support)."""
    if bin_count < 10:
        raise ValueError("bin_count must be at least 10")
    E = decomp.energies
    if energy_range is not None:
        lo, hi = energy_range
        E = E[(E >= lo) & (E <= hi)]
    counts, edges = np.histogram(E, bins=bin_count, range=energy_range)
    return Distribution(0.5 * (edges[1:] + edges[:-1]), counts / counts.sum(), edges=edges)


def critical_energy(model: ModelSpec, g: float) -> float | None:
    """ESQPT energy ``E_c(g)``; ``None`` outside the symmetry-breaking phase.

    LMG: the energy of the classical saddle (north pole), ``-g N / 2``; this is
    a diagnostic and should be checked against the density-of-states peak.
    QRM: ``-Omega / 2``.
    """
    if not model.symmetry_broken(g):
        return None
    if model.kind == "LMG":
        return -g * model.N / 2
    return -model.ratio / 2
