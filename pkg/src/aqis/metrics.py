"""Scrambling diagnostics built on adiabatic phase tables.

All functions take states expanded in the eigenbasis at ``g0`` and a
:class:`~aqis.propagation.PhaseTable` for the cycle.  Observables are used in
that eigenbasis, restricted to the levels a computation can actually reach.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .models import ModelSpec, ObservableMatrix, observable_matrix
from .propagation import (
    EvolutionControls,
    PhaseTable,
    QuadratureSettings,
    RampProtocol,
    evolve_exact,
    phase_tables_for_g1,
)
from .spectrum import DoubletTable, SpectralDecomposition
from .states import MixedState, PureState

__all__ = [
    "EigenbasisObservable",
    "eigenbasis_observable",
    "tracked_levels",
    "post_cycle_expectation",
    "TauSweepSeries",
    "tau_grid",
    "tau_sweep",
    "scrambling_sigma",
    "ScalingFit",
    "scaling_fit",
    "EchoCurve",
    "ECHO_TAGS",
    "loschmidt_adiabatic",
    "loschmidt_exact_smallN",
    "OtocSeries",
    "otoc_adiabatic",
    "otoc_series",
    "UniformityReport",
    "phase_uniformity",
    "OrderParameterCurve",
    "order_parameter_curve",
    "default_observable",
]

# amplitudes below this are treated as unpopulated when choosing supports
_SUPPORT_TOL = 1e-14
# admissible total population on levels a phase table does not track
_UNTRACKED_TOL = 1e-12


def _members(state):
    if isinstance(state, MixedState):
        return list(zip(state.weights, state.members))
    return [(1.0, state)]


def _check_eigen(state, phases: PhaseTable | None = None):
    for _, s in _members(state):
        if s.basis != "eigen":
            raise ValueError("state must be expanded in the eigenbasis at g0")
    decomp = _members(state)[0][1].decomp
    if phases is not None:
        if phases.model != decomp.model:
            raise ValueError("phase table belongs to a different model")
        if phases.protocol.g0 != decomp.g:
            raise ValueError(f"phase table starts at g0={phases.protocol.g0}, state is expanded at g={decomp.g}")
    return decomp


def _support(coeffs: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.abs(coeffs) > _SUPPORT_TOL)


# --------------------------------------------------------------------------- observable in eigenbasis


@dataclass(frozen=True, eq=False)
class EigenbasisObservable:
    """Dense block ``<phi_i|O|phi_j>`` for ``i, j`` in ``index`` (flat ordering)."""

    name: str
    decomp: SpectralDecomposition
    index: np.ndarray
    matrix: np.ndarray

    def position(self, flat) -> np.ndarray:
        """Rows of ``self.matrix`` for the flat eigen indices ``flat``."""
        pos = np.searchsorted(self.index, flat)
        if np.any(pos >= self.index.size) or np.any(self.index[np.minimum(pos, self.index.size - 1)] != flat):
            raise ValueError("requested levels outside the restricted observable")
        return pos


def eigenbasis_observable(decomp: SpectralDecomposition, obs: ObservableMatrix, index=None) -> EigenbasisObservable:
    """``V = Phi^T O Phi`` on the eigenvectors ``index`` (all levels by default)."""
    if decomp.vectors is None:
        raise ValueError("decomposition has no eigenvectors")
    if obs.model != decomp.model:
        raise ValueError("observable and decomposition belong to different models")
    index = np.arange(decomp.model.dim) if index is None else np.unique(np.asarray(index, dtype=int))
    W = decomp.vectors[:, index]
    return EigenbasisObservable(obs.name, decomp, index, W.T @ (obs.matrix @ W))


def _reach(decomp, obs, start, steps):
    """Eigen levels reachable from ``start`` by ``steps`` applications of ``obs``."""
    cur = np.unique(start)
    V = decomp.vectors
    OV = obs.matrix @ V
    for _ in range(steps):
        block = np.abs(V.T @ OV[:, cur])
        scale = max(float(block.max()), 1e-300)
        hit = np.flatnonzero((block > 1e-12 * scale).any(axis=1))
        cur = np.union1d(cur, hit)
    return cur


def tracked_levels(state, margin: int = 0) -> tuple:
    """Smallest per-parity level counts that hold all but 1e-12 of the population.

    The result is what :func:`~aqis.propagation.phase_table` needs as its
    ``levels`` argument for this state.
    """
    decomp = _check_eigen(state)
    pop = sum(w * s.populations() for w, s in _members(state))
    n0, n1 = decomp.sizes
    out = []
    for block, size in ((pop[:n0], n0), (pop[n0:], n1)):
        # population left above each candidate cut
        tail = np.concatenate([np.cumsum(block[::-1])[::-1], [0.0]])
        cut = int(np.argmax(tail <= _UNTRACKED_TOL / 2))
        out.append(min(size, cut + margin))
    return tuple(out)


# --------------------------------------------------------------------------- post-cycle expectation


def _table_phases(phases: PhaseTable, idx):
    ph = phases.phases[idx]
    if np.any(np.isnan(ph)):
        raise ValueError("phase table does not track every populated level; pass levels=tracked_levels(state)")
    return ph


def _tracked_support(c, phases: PhaseTable):
    """Support of ``c`` restricted to tracked levels; the part dropped must be negligible."""
    S = _support(c)
    keep = ~np.isnan(phases.rates[S])
    lost = float(np.sum(np.abs(c[S[~keep]]) ** 2))
    if lost > _UNTRACKED_TOL:
        raise ValueError(
            f"state has population {lost:.2e} on levels the phase table does not track; pass levels=tracked_levels(state)"
        )
    return S[keep]


def _relative_rates(phases: PhaseTable, idx):
    """Rates of ``idx`` minus the first one; a common shift is a global phase,
    and removing it keeps ``2 tau * rate`` small enough to exponentiate accurately."""
    r = phases.rates[idx]
    if np.any(np.isnan(r)):
        raise ValueError("phase table does not track every populated level; pass levels=tracked_levels(state)")
    return r - r[0] if r.size else r


def post_cycle_expectation(
    eigen_state,
    phases: PhaseTable,
    obs: EigenbasisObservable | None = None,
    doublets: DoubletTable | None = None,
    approx: bool = False,
) -> float:
    """``<psi(2 tau)|O|psi(2 tau)>`` after an adiabatic cycle.

    The default is the full bilinear sum over every pair of populated levels,
    with ``obs`` covering the populated support.  With ``approx=True`` only
    same-``k`` opposite-parity pairs contribute, weighted by the doublet
    matrix elements ``doublets.m``.
    """
    decomp = _check_eigen(eigen_state, phases)
    value = 0.0
    for w, s in _members(eigen_state):
        c = s.coefficients
        if approx:
            if doublets is None:
                raise ValueError("the doublet-reduced sum needs a DoubletTable")
            n0 = decomp.sizes[0]
            k = doublets.k
            cp, cm = c[k], c[n0 + k]
            used = (np.abs(cp) > _SUPPORT_TOL) | (np.abs(cm) > _SUPPORT_TOL)
            k = k[used]
            dphi = _table_phases(phases, k) - _table_phases(phases, n0 + k)
            terms = np.conj(c[k]) * c[n0 + k] * np.exp(1j * dphi) * doublets.m[k]
            value += w * 2 * float(terms.sum().real)
            continue
        if obs is None:
            raise ValueError("full sum needs the observable in the eigenbasis")
        S = _tracked_support(c, phases)
        cs = c[S] * np.exp(-2j * phases.protocol.tau * _relative_rates(phases, S))
        rows = obs.position(S)
        V = obs.matrix[np.ix_(rows, rows)]
        value += w * float(np.vdot(cs, V @ cs).real)
    return value


# --------------------------------------------------------------------------- tau sweeps


@dataclass(frozen=True, eq=False)
class TauSweepSeries:
    taus: np.ndarray
    values: np.ndarray
    initial: float = math.nan

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def variance(self) -> float:
        # population convention
        return float(np.mean((self.values - self.values.mean()) ** 2))


def tau_grid(tau0: float = 1e3, tau1: float = 1e4, sample_count: int = 256) -> np.ndarray:
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    if not 0 < tau0 < tau1:
        raise ValueError("need 0 < tau0 < tau1")
    return np.linspace(tau0, tau1, sample_count)


def _sweep_pure(c, rates, V, taus):
    # rows: tau; vectorized bilinear form
    C = c[None, :] * np.exp(-2j * taus[:, None] * rates[None, :])
    return np.einsum("ti,ti->t", np.conj(C), C @ V.T).real


def tau_sweep(
    eigen_state,
    phases: PhaseTable,
    obs: EigenbasisObservable | None = None,
    taus=None,
    doublets: DoubletTable | None = None,
    approx: bool = False,
    allow_short: bool = False,
) -> TauSweepSeries:
    """Post-cycle expectation over many ``tau`` from one phase table.

    Phase rates do not depend on ``tau``, so ``phi(tau) = 2 tau * rates``.
    ``taus`` defaults to 256 equally spaced values in ``[1e3, 1e4]``.
    """
    taus = tau_grid() if taus is None else np.asarray(taus, dtype=float)
    if taus.size < 2 or np.any(np.diff(taus) <= 0):
        raise ValueError("taus must be ascending with at least two samples")
    if taus[0] < 1e3 and not allow_short:
        raise ValueError(f"tau0={taus[0]} is below 1e3, outside the adiabatic regime (allow_short=True to override)")
    err = 2 * taus[-1] * phases.rate_error
    if err > 1e-2:
        warnings.warn(f"phase quadrature error estimate {err:.2e} rad at tau={taus[-1]:g}")
    _check_eigen(eigen_state, phases)
    # the leading tau=0 sample is the initial expectation
    grid = np.concatenate([[0.0], taus])
    if approx:
        if doublets is None:
            raise ValueError("the doublet-reduced sum needs a DoubletTable")
        n0 = phases.sizes[0]
        vals = np.zeros(grid.size)
        for w, s in _members(eigen_state):
            c = s.coefficients
            k = doublets.k[(np.abs(c[doublets.k]) > _SUPPORT_TOL) | (np.abs(c[n0 + doublets.k]) > _SUPPORT_TOL)]
            drate = _table_phases(phases, k) - _table_phases(phases, n0 + k)
            drate = drate / (2 * phases.protocol.tau)
            amp = np.conj(c[k]) * c[n0 + k] * doublets.m[k]
            vals += w * 2 * (np.exp(2j * np.outer(grid, drate)) @ amp).real
    else:
        if obs is None:
            raise ValueError("full sum needs the observable in the eigenbasis")
        vals = np.zeros(grid.size)
        for w, s in _members(eigen_state):
            S = _tracked_support(s.coefficients, phases)
            rows = obs.position(S)
            rates = _relative_rates(phases, S)
            vals += w * _sweep_pure(s.coefficients[S], rates, obs.matrix[np.ix_(rows, rows)], grid)
    return TauSweepSeries(taus, vals[1:], float(vals[0]))


def scrambling_sigma(series: TauSweepSeries) -> float:
    if series.values.size == 0:
        raise ValueError("empty series")
    return math.sqrt(series.variance)


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    prefactor: float
    residual: float


def scaling_fit(points) -> ScalingFit:
    """Least-squares line through ``(log N_mc, log sigma)``.

    ``residual`` is the RMS deviation in natural-log units.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 (N_mc, sigma) points")
    if np.any(pts <= 0):
        raise ValueError("scaling fit needs positive data")
    x, y = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, icpt = np.polyfit(x, y, 1)
    res = y - (slope * x + icpt)
    return ScalingFit(float(slope), float(math.exp(icpt)), float(np.sqrt(np.mean(res**2))))


# --------------------------------------------------------------------------- Loschmidt echo

ECHO_TAGS = ("phase-rate", "hold-at-g0", "literal")


@dataclass(frozen=True, eq=False)
class EchoCurve:
    dt: np.ndarray
    L: np.ndarray
    tag: str

    def decay_slope(self, lo: float | None = None, decades: float = 1.0) -> float:
        """Log-log slope of ``L`` over ``decades`` starting where ``L`` first drops below 0.5 (or at ``lo``)."""
        dt, L = self.dt, self.L
        if lo is None:
            below = np.flatnonzero((L < 0.5) & (dt > 0))
            if below.size == 0:
                raise ValueError("echo never decays below 0.5 on this grid")
            lo = dt[below[0]]
        sel = (dt >= lo) & (dt <= lo * 10**decades) & (L > 0)
        if sel.sum() < 3:
            raise ValueError("too few points in the fit window")
        return float(np.polyfit(np.log(dt[sel]), np.log(L[sel]), 1)[0])

    def max_revival(self) -> float:
        """Largest ``L`` after its first local minimum (``nan`` if ``L`` never turns back up)."""
        d = np.diff(self.L)
        turn = np.flatnonzero((d[:-1] < 0) & (d[1:] > 0))
        if turn.size == 0:
            return math.nan
        return float(self.L[turn[0] + 1 :].max())


def loschmidt_adiabatic(eigen_state: PureState, phases: PhaseTable, dt, tag: str = "phase-rate", decomp=None) -> EchoCurve:
    """``L(dt) = |sum_{k,p} |c_{k,p}|^2 exp(i dt X_{k,p})|`` in the adiabatic limit.

    ``tag`` selects ``X``: ``"phase-rate"`` the path-averaged energies (the
    echo of a cycle stretched by ``dt``), ``"hold-at-g0"`` the energies at
    ``g0`` (hold ``H(g0)`` for ``dt`` after the cycle), ``"literal"`` the
    accumulated phases themselves.
    """
    if tag not in ECHO_TAGS:
        raise ValueError(f"unknown echo interpretation {tag!r}; choose from {ECHO_TAGS}")
    if isinstance(eigen_state, MixedState):
        raise ValueError("the echo is defined for pure states")
    dec = _check_eigen(eigen_state, phases)
    p = eigen_state.populations()
    if abs(p.sum() - 1) > 1e-10:
        raise ValueError("state is not normalized")
    S = _support(eigen_state.coefficients)
    if tag == "phase-rate":
        X = phases.rates[S]
    elif tag == "literal":
        X = phases.phases[S]
    else:
        X = (decomp or dec).energies[S]
    if np.any(np.isnan(X)):
        raise ValueError("phase table does not track every populated level")
    dt = np.asarray(dt, dtype=float)
    # shift by the mean exponent: modulus unchanged, smaller arguments
    X = X - np.dot(p[S], X)
    L = np.abs(np.exp(1j * np.outer(dt, X)) @ p[S])
    L[dt == 0] = 1.0
    return EchoCurve(dt, np.minimum(L, 1.0), tag)


def loschmidt_exact_smallN(
    state: PureState,
    model: ModelSpec,
    protocol: RampProtocol,
    dt,
    convention: str = "hold",
    controls: EvolutionControls = EvolutionControls(),
    decomp: SpectralDecomposition | None = None,
) -> EchoCurve:
    """Echo from exact propagation of a physical-basis ``state``.

    ``convention="hold"``: ``U(2 tau + dt)`` holds ``g0`` for ``dt`` after the
    cycle.  ``convention="stretch"``: ``U(2 tau + dt)`` is the cycle with
    half-period ``tau + dt/2``.  The second convention needs one exact
    propagation per ``dt``.
    """
    if model.dim > 256:
        raise ValueError(f"exact echo limited to dimension 256, got {model.dim}")
    dt = np.atleast_1d(np.asarray(dt, dtype=float))
    if np.any(dt < 0):
        raise ValueError("dt must be non-negative")
    ref = evolve_exact(state, model, protocol, controls).final.coefficients
    if convention == "hold":
        from .spectrum import spectral_decomposition

        dec = decomp or spectral_decomposition(model, protocol.g0)
        a = dec.vectors.T @ ref
        p = np.abs(a) ** 2
        L = np.abs(np.exp(1j * np.outer(dt, dec.energies)) @ p)
        return EchoCurve(dt, np.minimum(L, 1.0), "hold-at-g0")
    if convention == "stretch":
        L = []
        for d in dt:
            if d == 0:
                L.append(1.0)
                continue
            other = evolve_exact(state, model, protocol.with_tau(protocol.tau + d / 2), controls).final.coefficients
            L.append(min(abs(np.vdot(other, ref)), 1.0))
        return EchoCurve(dt, np.array(L), "phase-rate")
    raise ValueError(f"unknown convention {convention!r}; use 'hold' or 'stretch'")


# --------------------------------------------------------------------------- OTOC


@dataclass(frozen=True, eq=False)
class OtocSeries:
    taus: np.ndarray
    values: np.ndarray  # complex O^Ad(2 tau)
    O0: float

    @property
    def rescaled(self) -> np.ndarray:
        return self.values.real / self.O0

    @property
    def rescaled_abs(self) -> np.ndarray:
        return np.abs(self.values) / self.O0


def _otoc_setup(eigen_state, obs: ObservableMatrix, decomp):
    S = _support(eigen_state.coefficients)
    R = _reach(decomp, obs, S, 2)
    return S, R, eigenbasis_observable(decomp, obs, R)


def otoc_adiabatic(eigen_state: PureState, V: EigenbasisObservable, phases: PhaseTable) -> complex:
    """``<psi|Phi^+ V Phi V Phi^+ V Phi V|psi>`` with ``Phi = diag(exp(-i phi))``.

    ``V`` must cover every level two applications of the observable reach
    from the support; the result is ``<u|w>`` with ``w = Phi^+ V Phi V psi``
    and ``u = V Phi^+ V Phi psi``.
    """
    decomp = _check_eigen(eigen_state, phases)
    if V.decomp is not decomp:
        raise ValueError("observable was built for a different decomposition")
    idx = V.index
    c = eigen_state.coefficients
    outside = np.setdiff1d(_support(c), idx)
    if outside.size:
        raise ValueError("observable block does not cover the state's support")
    rates = phases.rates[idx]
    psi = c[idx]
    tracked = ~np.isnan(rates)
    ref = rates[tracked][0] if tracked.any() else 0.0
    ph = np.where(tracked, 2 * phases.protocol.tau * (rates - ref), 0.0)
    e = np.exp(-1j * ph)
    v1 = V.matrix @ psi
    v2 = V.matrix @ (e * v1)
    w = np.conj(e) * v2
    u1 = V.matrix @ (e * psi)
    u = V.matrix @ (np.conj(e) * u1)
    lost = max(float(np.sum(np.abs(v1[~tracked]) ** 2)), float(np.sum(np.abs(u1[~tracked]) ** 2)))
    if lost > _UNTRACKED_TOL * max(1.0, float(np.vdot(v1, v1).real)):
        raise ValueError("observable couples the state to levels the phase table does not track")
    return complex(np.vdot(u, w))


def otoc_series(eigen_state: PureState, phases: PhaseTable, obs: ObservableMatrix, taus=None) -> OtocSeries:
    """Adiabatic OTOC over ``taus`` (default 256 values in ``[1e3, 1e4]``), rescaled by ``<Sx^4>``."""
    decomp = _check_eigen(eigen_state, phases)
    taus = tau_grid() if taus is None else np.asarray(taus, dtype=float)
    _, _, V = _otoc_setup(eigen_state, obs, decomp)
    vals = np.array([otoc_adiabatic(eigen_state, V, phases.with_tau(t)) for t in taus])
    # equal-time normalization straight from the physical basis
    phys = decomp.vectors @ eigen_state.coefficients
    x2 = obs.matrix @ (obs.matrix @ phys)
    return OtocSeries(taus, vals, float(np.vdot(x2, x2).real))


# --------------------------------------------------------------------------- phase uniformity


@dataclass(frozen=True, eq=False)
class UniformityReport:
    k: np.ndarray
    sample: np.ndarray  # delta phi mod 2 pi
    D: float
    pvalue: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    @property
    def n(self) -> int:
        return self.sample.size

    @property
    def circle_points(self) -> np.ndarray:
        return np.column_stack([np.cos(self.sample), np.sin(self.sample)])


def phase_uniformity(phases: PhaseTable, k_range=(0, 200), bins: int = 20) -> UniformityReport:
    """One-sample KS test of ``delta phi_k mod 2 pi`` against the uniform law on ``[0, 2 pi)``."""
    lo, hi = k_range
    dphi = phases.delta_phi
    if not 0 <= lo < hi <= dphi.size:
        raise ValueError(f"k_range {k_range} outside the {dphi.size} doublets tracked in both sectors")
    k = np.arange(lo, hi)
    sample = np.mod(dphi[lo:hi], 2 * np.pi)
    res = stats.kstest(sample, stats.uniform(loc=0, scale=2 * np.pi).cdf)
    counts, edges = np.histogram(sample, bins=bins, range=(0, 2 * np.pi))
    return UniformityReport(k, sample, float(res.statistic), float(res.pvalue), counts, edges)


# --------------------------------------------------------------------------- order parameter vs g1


@dataclass(frozen=True, eq=False)
class OrderParameterCurve:
    g1: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    initial: float


def order_parameter_curve(
    eigen_state,
    obs: ObservableMatrix,
    g1_values,
    taus=None,
    quadrature: QuadratureSettings = QuadratureSettings(),
    workers: int | None = None,
) -> OrderParameterCurve:
    """``tau``-averaged post-cycle order parameter for each turning point ``g1``.

    ``mean`` is the signed average over ``taus``, ``std`` its population
    standard deviation.  Phase tables for all ``g1`` share one pass along
    the coupling axis.
    """
    decomp = _check_eigen(eigen_state)
    taus = tau_grid() if taus is None else np.asarray(taus, dtype=float)
    g1_values = np.asarray(g1_values, dtype=float)
    levels = tracked_levels(eigen_state)
    tables = phase_tables_for_g1(
        decomp.model, decomp.g, g1_values, float(taus[0]), quadrature, levels=levels, tau_max=float(taus[-1]), workers=workers
    )
    support = np.unique(np.concatenate([_support(s.coefficients) for _, s in _members(eigen_state)]))
    V = eigenbasis_observable(decomp, obs, support)
    means, stds, initial = [], [], math.nan
    for table in tables:
        series = tau_sweep(eigen_state, table, V, taus, allow_short=True)
        means.append(series.mean)
        stds.append(math.sqrt(series.variance))
        initial = series.initial
    return OrderParameterCurve(g1_values, np.array(means), np.array(stds), initial)


def default_observable(model: ModelSpec) -> ObservableMatrix:
    return observable_matrix(model, "Sx" if model.kind == "LMG" else "x")

