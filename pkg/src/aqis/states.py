"""Initial states, basis changes, and observable / energy distributions."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .distribution import Distribution
from .models import ModelSpec, ObservableMatrix, affine_blocks
from .spectrum import DoubletTable, SpectralDecomposition
from .tridiag import eigensolve_tridiagonal

__all__ = [
    "PureState",
    "MixedState",
    "microcanonical_sb",
    "thermal_sb",
    "qrm_coherent",
    "expand_in_eigenbasis",
    "to_physical",
    "observable_distribution",
    "energy_distribution",
    "expectation",
    "LeakageError",
]

# Boltzmann weights below this (relative to the largest) are dropped
_THERMAL_CUTOFF = 1e-12
# Fock tail population above this means the cutoff is too small
_TAIL_TOL = 1e-10


class LeakageError(ValueError):
    """A thermal state would put weight on doublets that are not degenerate."""


@dataclass(frozen=True, eq=False)
class PureState:
    """Coefficient vector in the physical basis (``decomp is None``) or in the
    eigenbasis of ``decomp`` (flat even-then-odd ordering)."""

    coefficients: np.ndarray
    model: ModelSpec
    decomp: SpectralDecomposition | None = None

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        expected = self.model.dim
        if c.shape != (expected,):
            raise ValueError(f"coefficient vector has shape {c.shape}, basis needs ({expected},)")
        if self.decomp is not None and self.decomp.model != self.model:
            raise ValueError("eigenbasis belongs to a different model")
        object.__setattr__(self, "coefficients", c)

    @property
    def basis(self) -> str:
        return "physical" if self.decomp is None else "eigen"

    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def populations(self) -> np.ndarray:
        return np.abs(self.coefficients) ** 2


@dataclass(frozen=True, eq=False)
class MixedState:
    """Weighted ensemble of pure states, all in the same basis."""

    weights: np.ndarray
    members: tuple
    discarded_weight: float = 0.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size != len(self.members) or w.size == 0:
            raise ValueError("need one positive weight per member")
        if np.any(w <= 0):
            raise ValueError("ensemble weights must be positive")
        if abs(w.sum() - 1) > 1e-12:
            raise ValueError(f"ensemble weights sum to {w.sum()!r}, not 1")
        bases = {(m.basis, id(m.decomp)) for m in self.members}
        if len(bases) != 1:
            raise ValueError("ensemble members must share a basis")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "members", tuple(self.members))

    @property
    def model(self) -> ModelSpec:
        return self.members[0].model

    @property
    def basis(self) -> str:
        return self.members[0].basis

    @property
    def decomp(self):
        return self.members[0].decomp

    def map(self, fn) -> "MixedState":
        return MixedState(self.weights, tuple(fn(m) for m in self.members), self.discarded_weight, dict(self.info))


def _members(state):
    if isinstance(state, MixedState):
        return list(zip(state.weights, state.members))
    return [(1.0, state)]


def _doublet_signs(doublets: DoubletTable, ks) -> np.ndarray:
    m = doublets.m[ks]
    scale = max(float(np.abs(doublets.m).max()), 1.0)
    zero = np.flatnonzero(np.abs(m) <= 1e-12 * scale)
    if zero.size:
        raise ValueError(f"doublet k={int(ks[zero[0]])} has vanishing order-parameter matrix element; sign is ambiguous")
    return np.sign(m)


def microcanonical_sb(decomp: SpectralDecomposition, doublets: DoubletTable, n_mc: int) -> PureState:
    """Equal-weight superposition of the lowest ``n_mc`` doublets, broken towards positive order parameter.

    Relative signs follow ``sign(<k,+|O|k,->)`` so every doublet contributes
    positively.  Returned in the eigenbasis of ``decomp``.
    """
    n_mc = int(n_mc)
    if n_mc < 1:
        raise ValueError("n_mc must be positive")
    available = doublets.leading_degenerate()
    if n_mc > available:
        raise ValueError(
            f"n_mc={n_mc} exceeds the {available} degenerate doublets below the critical energy "
            f"({decomp.model.label()}, g={decomp.g})"
        )
    ks = np.arange(n_mc)
    x = _doublet_signs(doublets, ks)
    c = np.zeros(decomp.model.dim, dtype=complex)
    n0 = decomp.sizes[0]
    c[ks] = 1.0
    c[n0 + ks] = x
    c /= math.sqrt(2 * n_mc)
    return PureState(c, decomp.model, decomp)


def thermal_sb(decomp: SpectralDecomposition, doublets: DoubletTable, beta: float) -> MixedState:
    """Boltzmann mixture of maximally broken doublet states ``(|k,+> + x_k |k,->)/sqrt(2)``.

    Only degenerate doublets carry weight.  Members with relative weight below
    1e-12 are dropped; the dropped weight (including any levels that are not
    part of a degenerate doublet) is reported in ``discarded_weight``.  A
    non-degenerate doublet above the cutoff raises :class:`LeakageError`.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    E = 0.5 * (doublets.E_plus + doublets.E_minus)
    # every level of the spectrum, to account for discarded weight
    all_E = decomp.energies
    e_min = all_E.min()
    rel = np.exp(-beta * (E - e_min))
    keep = rel >= _THERMAL_CUTOFF
    leaked = keep & ~doublets.degenerate
    if leaked.any():
        Z_all = np.exp(-beta * (all_E - e_min)).sum()
        raise LeakageError(
            f"{int(leaked.sum())} non-degenerate doublets (first k={int(np.flatnonzero(leaked)[0])}) "
            f"would carry weight {2 * rel[leaked].sum() / Z_all:.3e}"
        )
    ks = np.flatnonzero(keep)
    x = _doublet_signs(doublets, ks)
    Z_all = np.exp(-beta * (all_E - e_min)).sum()
    w = 2 * rel[ks]
    discarded = 1.0 - w.sum() / Z_all
    w = w / w.sum()
    n0 = decomp.sizes[0]
    members = []
    for k, xk in zip(ks, x):
        c = np.zeros(decomp.model.dim, dtype=complex)
        c[k] = 1 / math.sqrt(2)
        c[n0 + k] = xk / math.sqrt(2)
        members.append(PureState(c, decomp.model, decomp))
    return MixedState(w, tuple(members), discarded_weight=float(max(discarded, 0.0)), info={"beta": beta, "k": ks})


def qrm_coherent(model: ModelSpec, alpha: complex, g: float | None = None) -> PureState:
    """Coherent oscillator state ``|alpha>`` times a spin state, physical basis.

    With ``g`` omitted (or zero) the spin is ``sigma_z``-down.  With a coupling
    ``g`` the spin is the ground state of its mean-field Hamiltonian
    ``(Omega/2) sigma_z + g lambda_c <a + a^dag> sigma_x``, i.e. spin-down in
    the frame dressed by the coherent displacement; this reduces to
    spin-down at ``alpha = 0`` or ``g = 0``.
    """
    if model.kind != "QRM":
        raise ValueError("coherent initial states are defined for the QRM only")
    alpha = complex(alpha)
    n = np.arange(model.n_max + 1)
    a2 = abs(alpha) ** 2
    if a2 == 0:
        amp = np.zeros(n.size, dtype=complex)
        amp[0] = 1.0
    else:
        log_mag = -a2 / 2 + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
        amp = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    tail = float(np.sum(np.abs(amp[-max(1, model.n_max // 20):]) ** 2))
    kept = float(np.sum(np.abs(amp) ** 2))
    if 1 - kept > _TAIL_TOL or tail > _TAIL_TOL:
        raise ValueError(f"Fock cutoff n_max={model.n_max} too small for |alpha|^2={a2:g} (lost weight {1 - kept:.2e})")
    amp /= math.sqrt(kept)
    down, up = 1.0, 0.0
    if g:
        # spin ground state of (Omega/2) sz + h sx
        h = g * model.lambda_c * 2 * alpha.real
        theta = math.atan2(h, model.ratio / 2)
        down, up = math.cos(theta / 2), -math.sin(theta / 2)
    c = np.zeros(model.dim, dtype=complex)
    c[0::2] = down * amp
    c[1::2] = up * amp
    return PureState(c, model)


def expand_in_eigenbasis(state: PureState | MixedState, decomp: SpectralDecomposition):
    """Coefficients ``<phi_{k,p}|psi>`` in the flat eigenbasis ordering."""
    if isinstance(state, MixedState):
        return state.map(lambda s: expand_in_eigenbasis(s, decomp))
    if state.basis != "physical":
        raise ValueError("state is already in an eigenbasis")
    if state.model != decomp.model:
        raise ValueError("state and decomposition belong to different models")
    if decomp.vectors is None:
        raise ValueError("decomposition has no eigenvectors")
    return PureState(decomp.vectors.T @ state.coefficients, state.model, decomp)


def to_physical(state):
    if isinstance(state, MixedState):
        return state.map(to_physical)
    if state.basis == "physical":
        return state
    return PureState(state.decomp.vectors @ state.coefficients, state.model)


@lru_cache(maxsize=16)
def _observable_eigensystem(model: ModelSpec, name: str):
    """Eigenvalues and physical-basis eigenvectors of a named observable.

    Returns ``(values, vecs, kind)`` where ``kind`` is ``"diag"`` for
    observables diagonal in the physical basis (``vecs`` then unused).
    """
    if name in ("Sz", "n_phot", "sigmaz"):
        from .models import observable_matrix

        return observable_matrix(model, name).matrix.diagonal().copy(), None, "diag"
    if name == "Sx":
        J = model.J
        M = np.arange(model.dim) - J
        off = np.sqrt(J * (J + 1) - M[:-1] * (M[:-1] + 1)) / 2
        vals, vecs = eigensolve_tridiagonal(np.zeros(model.dim), off, True)
        return vals, vecs, "dense"
    if name == "x":
        n = np.arange(model.n_max + 1, dtype=float)
        vals, vecs = eigensolve_tridiagonal(np.zeros(n.size), np.sqrt(n[1:] / 2), True)
        return vals, vecs, "oscillator"
    if name == "Sx2":
        vals, vecs, _ = _observable_eigensystem(model, "Sx")
        return vals**2, vecs, "dense"
    raise ValueError(f"no eigensystem for observable {name!r}")


def _pure_observable_probs(coeffs, model, name):
    vals, vecs, kind = _observable_eigensystem(model, name)
    if kind == "diag":
        return vals, np.abs(coeffs) ** 2
    if kind == "dense":
        return vals, np.abs(vecs.T @ coeffs) ** 2
    # oscillator position eigenbasis tensored with the spin
    amps = vecs.T @ coeffs.reshape(-1, 2)
    return vals, (np.abs(amps) ** 2).sum(axis=1)


def observable_distribution(state, obs: ObservableMatrix, merge_tol: float = 1e-9) -> Distribution:
    """Probability of each eigenvalue of ``obs``; mixtures are weight-averaged."""
    phys = to_physical(state)
    total = None
    for w, s in _members(phys):
        if s.model != obs.model:
            raise ValueError("state and observable belong to different models")
        vals, p = _pure_observable_probs(s.coefficients, s.model, obs.name)
        total = w * p if total is None else total + w * p
    return Distribution.from_samples(vals, total, merge_tol=merge_tol)


def energy_distribution(eigen_state, doublets: DoubletTable | None = None) -> Distribution:
    """``P(E)`` from eigenbasis populations.

    Degenerate doublets (per ``doublets``) contribute one support point with
    the summed parity weights; every other level is its own point.
    """
    total = None
    for w, s in _members(eigen_state):
        if s.basis != "eigen":
            raise ValueError("energy distribution needs a state in the eigenbasis")
        p = w * s.populations()
        total = p if total is None else total + p
    decomp = _members(eigen_state)[0][1].decomp
    E = decomp.energies.copy()
    weights = total.copy()
    n0 = decomp.sizes[0]
    if doublets is not None:
        ks = doublets.k[doublets.degenerate]
        # fold the odd member of each degenerate doublet onto its even partner
        weights[ks] += weights[n0 + ks]
        keep = np.ones(E.size, dtype=bool)
        keep[n0 + ks] = False
        E[ks] = 0.5 * (doublets.E_plus[ks] + doublets.E_minus[ks])
        E, weights = E[keep], weights[keep]
    order = np.argsort(E, kind="stable")
    E, weights = E[order], weights[order]
    # exact ties can still occur (e.g. accidental cross-sector degeneracy)
    return Distribution.from_samples(E, weights, merge_tol=0.0)


def expectation(state, obs: ObservableMatrix) -> float:
    """``<psi|O|psi>`` (mixtures: weight-averaged over members)."""
    value = 0.0
    for w, s in _members(state):
        s = to_physical(s)
        if s.model != obs.model:
            raise ValueError("state and observable belong to different models")
        c = s.coefficients
        val = np.vdot(c, obs.matrix @ c)
        if abs(val.imag) > 1e-9 * max(1.0, abs(val.real)):
            warnings.warn(f"expectation of Hermitian {obs.name} has imaginary part {val.imag:.3e}")
        value += w * val.real
    return float(value)
