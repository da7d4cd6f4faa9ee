"""Driving protocols, exact time evolution, and adiabatic phase accumulation."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .models import ModelSpec, affine_blocks, hamiltonian, observable_matrix
from .spectrum import SpectralDecomposition, block_eigenvalues
from .states import MixedState, PureState
from .tridiag import eigensolve_tridiagonal, eigenvalues_by_index

__all__ = [
    "RampProtocol",
    "PiecewiseConstantProtocol",
    "ramp_value",
    "EvolutionControls",
    "Trajectory",
    "IntegrationError",
    "evolve_exact",
    "QuadratureSettings",
    "QuadratureError",
    "PhaseTable",
    "phase_table",
    "phase_tables_for_g1",
    "integrate_levels",
    "adiabatic_cycle",
    "hold_evolution",
    "default_workers",
]


log = logging.getLogger(__name__)


def default_workers() -> int:
    env = os.environ.get("AQIS_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# --------------------------------------------------------------------------- protocols


@dataclass(frozen=True)
class RampProtocol:
    """Triangular cycle ``g0 -> g1`` in time ``tau`` and back in another ``tau``."""

    g0: float
    g1: float
    tau: float
    shape: str = "linear"

    def __post_init__(self):
        if self.shape != "linear":
            raise ValueError(f"unsupported ramp shape {self.shape!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        for v in (self.g0, self.g1, self.tau):
            if not math.isfinite(v):
                raise ValueError("protocol parameters must be finite")

    @property
    def duration(self) -> float:
        return 2 * self.tau

    def value(self, t):
        return ramp_value(self, t)

    def legs(self):
        return [(0.0, self.tau, self.g0, self.g1), (self.tau, 2 * self.tau, self.g1, self.g0)]

    def reversed(self) -> "RampProtocol":
        """Time-reversed cycle ``g(2 tau - t)``; the triangle maps onto itself."""
        return RampProtocol(self.g0, self.g1, self.tau, self.shape)

    def with_tau(self, tau: float) -> "RampProtocol":
        return replace(self, tau=float(tau))


def ramp_value(protocol: RampProtocol, t):
    """``g(t)`` of the triangular ramp; ``t`` must lie in ``[0, 2 tau]``."""
    t_arr = np.asarray(t, dtype=float)
    tau = protocol.tau
    if np.any(t_arr < 0) or np.any(t_arr > 2 * tau):
        raise ValueError(f"t outside [0, 2 tau] = [0, {2 * tau}]")
    s = np.where(t_arr <= tau, t_arr, 2 * tau - t_arr) / tau
    out = protocol.g0 + (protocol.g1 - protocol.g0) * s
    return float(out) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class PiecewiseConstantProtocol:
    """``g`` held at ``values[i]`` on ``[times[i], times[i+1])``; ``times[0] = 0``."""

    times: tuple
    values: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        values = tuple(float(v) for v in self.values)
        if len(times) != len(values) + 1 or times[0] != 0.0:
            raise ValueError("need len(times) == len(values) + 1 and times[0] == 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("segment times must increase")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def duration(self) -> float:
        return self.times[-1]

    def value(self, t):
        i = np.searchsorted(self.times, t, side="right") - 1
        i = np.clip(i, 0, len(self.values) - 1)
        return np.asarray(self.values)[i]

    def legs(self):
        return [(a, b, v, v) for a, b, v in zip(self.times, self.times[1:], self.values)]

    @classmethod
    def sampled_ramp(cls, protocol: RampProtocol, segments: int) -> "PiecewiseConstantProtocol":
        """Midpoint sampling of a ramp on ``segments`` equal time slices."""
        edges = np.linspace(0.0, protocol.duration, segments + 1)
        mids = 0.5 * (edges[1:] + edges[:-1])
        return cls(tuple(edges), tuple(ramp_value(protocol, mids)))


# --------------------------------------------------------------------------- exact propagation


class IntegrationError(RuntimeError):
    """Exact propagation failed its norm or step-halving checks."""


@njit(cache=True)
def _hpsi(dA, dB, oA, oB, g, shift, psi, out):
    n = psi.shape[0]
    for i in range(n):
        acc = (dA[i] + g * dB[i] - shift) * psi[i]
        if i > 0:
            acc += (oA[i - 1] + g * oB[i - 1]) * psi[i - 1]
        if i < n - 1:
            acc += (oA[i] + g * oB[i]) * psi[i + 1]
        out[i] = -1j * acc


@njit(cache=True)
def _rk4_block(psi, dA, dB, oA, oB, t0, dt, nsteps, g0, slope, shift):
    n = psi.shape[0]
    k1 = np.empty(n, dtype=np.complex128)
    k2 = np.empty(n, dtype=np.complex128)
    k3 = np.empty(n, dtype=np.complex128)
    k4 = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    for step in range(nsteps):
        t = t0 + step * dt
        ga = g0 + slope * t
        gm = g0 + slope * (t + 0.5 * dt)
        gb = g0 + slope * (t + dt)
        _hpsi(dA, dB, oA, oB, ga, shift, psi, k1)
        for i in range(n):
            tmp[i] = psi[i] + 0.5 * dt * k1[i]
        _hpsi(dA, dB, oA, oB, gm, shift, tmp, k2)
        for i in range(n):
            tmp[i] = psi[i] + 0.5 * dt * k2[i]
        _hpsi(dA, dB, oA, oB, gm, shift, tmp, k3)
        for i in range(n):
            tmp[i] = psi[i] + dt * k3[i]
        _hpsi(dA, dB, oA, oB, gb, shift, tmp, k4)
        for i in range(n):
            psi[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return psi


@dataclass(frozen=True)
class EvolutionControls:
    """Step control for :func:`evolve_exact`.

    ``step_control`` bounds ``||H|| dt``.  ``samples`` is the approximate
    number of observable samples along the trajectory.
    """

    step_control: float = 0.05
    samples: int = 500
    check_convergence: bool = True
    convergence_tol: float = 1e-6
    norm_tol: float = 1e-6
    max_halvings: int = 3

    def __post_init__(self):
        if not 0 < self.step_control <= 0.05:
            raise ValueError("step_control must lie in (0, 0.05]")


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    g: np.ndarray
    order_parameter: np.ndarray
    polarization: np.ndarray
    energy: np.ndarray
    norm: np.ndarray
    final: PureState
    dt_max: float
    steps: int
    convergence: float | None = None
    observables: tuple = ("Sx", "Sz")


def _hnorm_bound(model: ModelSpec, g: float) -> float:
    best = 0.0
    for idx, dA, dB, oA, oB in affine_blocks(model):
        d = np.abs(dA + g * dB)
        o = np.abs(oA + g * oB)
        row = d.copy()
        row[:-1] += o
        row[1:] += o
        best = max(best, float(row.max()))
    return best


def _propagate(state_blocks, model, legs, dt_max, sample_dt, on_sample):
    """RK4 over ``legs``; returns evolved blocks and the step count."""
    blocks = affine_blocks(model)
    psi = [b.copy() for b in state_blocks]
    total_steps = 0
    for t_start, t_end, g_start, g_end in legs:
        length = t_end - t_start
        nsteps = max(1, math.ceil(length / dt_max - 1e-9))
        dt = length / nsteps
        slope = (g_end - g_start) / length
        chunk = max(1, int(round(sample_dt / dt))) if sample_dt else nsteps
        done = 0
        while done < nsteps:
            n = min(chunk, nsteps - done)
            t_local = done * dt
            g_here = g_start + slope * t_local
            # constant energy shift per chunk: exact global phase, smaller RK4 phase error
            shift = 0.0
            norm2 = 0.0
            for p, (idx, dA, dB, oA, oB) in enumerate(blocks):
                v = psi[p]
                hv = (dA + g_here * dB) * v
                o = oA + g_here * oB
                hv[:-1] += o * v[1:]
                hv[1:] += o * v[:-1]
                shift += float(np.vdot(v, hv).real)
                norm2 += float(np.vdot(v, v).real)
            shift /= max(norm2, 1e-300)
            for p, (idx, dA, dB, oA, oB) in enumerate(blocks):
                _rk4_block(psi[p], dA, dB, oA, oB, t_local, dt, n, g_start, slope, shift)
                psi[p] *= np.exp(-1j * shift * n * dt)
            done += n
            total_steps += n
            if on_sample is not None:
                on_sample(t_start + done * dt, g_start + slope * done * dt, psi)
    return psi, total_steps


def _split(model, coeffs):
    return [coeffs[b[0]].astype(complex) for b in affine_blocks(model)]


def _join(model, psi_blocks):
    out = np.zeros(model.dim, dtype=complex)
    for b, v in zip(affine_blocks(model), psi_blocks):
        out[b[0]] = v
    return out


def evolve_exact(state: PureState, model: ModelSpec, protocol, controls: EvolutionControls = EvolutionControls()) -> Trajectory:
    """Integrate ``i d/dt psi = H(g(t)) psi`` with classical RK4.

    Works on the two parity blocks separately (each tridiagonal).  Steps are
    aligned with protocol breakpoints.  With ``controls.check_convergence``
    the run is repeated at half the step; if the final states differ by more
    than ``convergence_tol`` the step is halved again (at most
    ``controls.max_halvings`` times) before giving up.
    """
    if state.basis != "physical":
        raise ValueError("exact propagation needs a physical-basis state")
    if state.model != model:
        raise ValueError("state belongs to a different model")
    legs = protocol.legs()
    hmax = max(max(_hnorm_bound(model, a), _hnorm_bound(model, b)) for _, _, a, b in legs)
    dt = controls.step_control / max(hmax, 1e-12)
    sample_dt = protocol.duration / max(controls.samples, 1)
    names = ("Sx", "Sz") if model.kind == "LMG" else ("x", "sigmaz")

    run = _sampled_run(state, model, legs, dt, sample_dt, names)
    conv = None
    if controls.check_convergence:
        for _ in range(controls.max_halvings + 1):
            finer = _sampled_run(state, model, legs, dt / 2, sample_dt, names)
            conv = float(np.linalg.norm(finer[0] - run[0]))
            if conv <= controls.convergence_tol:
                break
            run, dt = finer, dt / 2
        else:
            raise IntegrationError(
                f"step-halving still changes the final state by {conv:.2e} (> {controls.convergence_tol:.0e}) "
                f"at dt={dt:.3e}"
            )
    final, data, steps = run
    drift = float(np.max(np.abs(data[:, 5] - state.norm())))
    if drift > controls.norm_tol:
        raise IntegrationError(f"norm drift {drift:.2e} exceeds {controls.norm_tol:.0e}; reduce the step")
    return Trajectory(
        times=data[:, 0],
        g=data[:, 1],
        order_parameter=data[:, 2],
        polarization=data[:, 3],
        energy=data[:, 4],
        norm=data[:, 5],
        final=PureState(final, model),
        dt_max=dt,
        steps=steps,
        convergence=conv,
        observables=names,
    )


def _sampled_run(state, model, legs, dt, sample_dt, names):
    O1 = observable_matrix(model, names[0]).matrix
    O2 = observable_matrix(model, names[1]).matrix
    rows = []

    def record(t, g, psi_blocks):
        c = _join(model, psi_blocks)
        H = hamiltonian(model, g)
        rows.append((t, g, np.vdot(c, O1 @ c).real, np.vdot(c, O2 @ c).real, np.vdot(c, H @ c).real, np.linalg.norm(c)))

    record(0.0, legs[0][2], _split(model, state.coefficients))
    psi, steps = _propagate(_split(model, state.coefficients), model, legs, dt, sample_dt, record)
    return _join(model, psi), np.array(rows), steps


# --------------------------------------------------------------------------- phase quadrature


class QuadratureError(RuntimeError):
    """Adaptive Simpson refinement hit its node cap."""


@dataclass(frozen=True)
class QuadratureSettings:
    """Composite Simpson settings.

    ``tolerance`` is the admissible phase error in radians at the largest
    ``tau`` the table will be used with.
    """

    node_count: int = 1025
    tolerance: float = 1e-3
    max_nodes: int = 65537

    def __post_init__(self):
        if self.node_count < 3 or self.node_count % 2 == 0:
            raise ValueError("node_count must be odd and >= 3")


def _levels_at(model, g, levels):
    e0, e1 = block_eigenvalues(model, g)
    return np.concatenate([e0[: levels[0]], e1[: levels[1]]])


class _LevelCache:
    """Per-node eigenvalues of the tracked levels.

    ``fetch`` returns all tracked levels (QL on every block).  ``fetch_some``
    returns selected levels at one node, by bisection when few are needed.
    """

    # bisection costs ~30 QL-amortized levels per level, so it only pays for sparse requests
    SPARSE_FRACTION = 1 / 32

    def __init__(self, model, levels, workers):
        self.model = model
        self.levels = levels
        self.workers = workers
        self.values = {}
        self.partial_nodes = set()
        self._blocks = affine_blocks(model)

    def _map(self, fn, items):
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def fetch(self, gs):
        todo = sorted({float(g) for g in gs} - self.values.keys())
        if todo:
            res = self._map(lambda g: _levels_at(self.model, g, self.levels), todo)
            # insertion order is irrelevant: results are looked up by node
            self.values.update(zip(todo, res))
        return np.array([self.values[float(g)] for g in gs])

    def _some_at(self, g, flat):
        if g in self.values:
            return self.values[g][flat]
        l0 = self.levels[0]
        out = np.empty(flat.size)
        for p, sel in enumerate((flat < l0, flat >= l0)):
            if not sel.any():
                continue
            ks = flat[sel] - (0 if p == 0 else l0)
            _, dA, dB, oA, oB = self._blocks[p]
            d, o = dA + g * dB, oA + g * oB
            if ks.size > self.SPARSE_FRACTION * d.size:
                out[sel] = eigensolve_tridiagonal(d, o, context=f"g={g}")[0][ks]
            else:
                out[sel] = eigenvalues_by_index(d, o, ks)
        self.partial_nodes.add(g)
        return out

    def fetch_some(self, gs, flat):
        """Values of tracked level ``flat[i]`` at ``gs[i]``."""
        gs = np.asarray(gs, dtype=float)
        flat = np.asarray(flat, dtype=np.int64)
        out = np.empty(gs.size)
        order = np.argsort(gs, kind="stable")
        uniq, starts = np.unique(gs[order], return_index=True)
        groups = np.split(order, starts[1:])
        res = self._map(lambda item: self._some_at(float(item[0]), flat[item[1]]), list(zip(uniq, groups)))
        for idx, vals in zip(groups, res):
            out[idx] = vals
        return out

    @property
    def node_count(self) -> int:
        return len(self.values.keys() | self.partial_nodes)


def integrate_levels(model, a, b, levels, rate_tol, settings=QuadratureSettings(), workers=1, cache=None):
    """``int_a^b E_{k,p}(g) dg`` for the lowest ``levels`` per parity.

    Panel-adaptive composite Simpson, refined level by level.  The first pass
    evaluates every tracked level on a uniform grid of
    ``settings.node_count`` nodes (each panel is also bisected once).  Each
    level has the error budget ``rate_tol * |b - a|``, split in two pools.

    * A (panel, level) pair whose Richardson estimate ``|S_fine - S_coarse| / 15``
      is within ``rate_tol * width / 2`` is accepted with the extrapolated
      value ``S_fine + (S_fine - S_coarse) / 15``.
    * Pairs failing that test (kinks from narrow avoided crossings, where
      Simpson converges only as ``h^2``) may be accepted from the second pool
      of ``rate_tol * |b - a| / 2``, charged the full ``|S_fine - S_coarse|``
      and contributing ``S_fine``.  Each round releases at most half of what
      is left of the pool, smallest charges first.

    Everything else is bisected for that level only.

    Returns ``(integral, nodes_used, error_estimate)``.
    """
    L = sum(levels)
    if a == b:
        return np.zeros(L), 0, 0.0
    cache = cache or _LevelCache(model, levels, workers)
    edges = np.linspace(a, b, (settings.node_count - 1) // 2 + 1)
    lo0, hi0 = edges[:-1], edges[1:]
    mid0 = 0.5 * (lo0 + hi0)
    fl, f1, fm, f3, fh = (cache.fetch(x) for x in (lo0, 0.5 * (lo0 + mid0), mid0, 0.5 * (mid0 + hi0), hi0))
    # one item per (panel, level)
    P = lo0.size
    lev = np.tile(np.arange(L), P)
    lo = np.repeat(lo0, L)
    hi = np.repeat(hi0, L)
    f_lo, f_q1, f_mid, f_q3, f_hi = (f.ravel() for f in (fl, f1, fm, f3, fh))
    total = np.zeros(L)
    err_total = np.zeros(L)
    pool = np.full(L, 0.5 * rate_tol * abs(b - a))
    min_width = 1e-13 * max(1.0, abs(a), abs(b))
    start_nodes = cache.node_count
    rounds = 0
    while lev.size:
        rounds += 1
        w = hi - lo
        coarse = w / 6 * (f_lo + 4 * f_mid + f_hi)
        fine = w / 12 * (f_lo + 4 * f_q1 + 2 * f_mid + 4 * f_q3 + f_hi)
        diff = np.abs(fine - coarse)
        ok = diff / 15 <= 0.5 * rate_tol * np.abs(w)
        np.add.at(total, lev[ok], (fine + (fine - coarse) / 15)[ok])
        np.add.at(err_total, lev[ok], diff[ok] / 15)
        # forgive the cheapest failures per level from half the remaining pool
        cand = np.flatnonzero(~ok)
        if cand.size:
            cand = cand[np.lexsort((diff[cand], lev[cand]))]
            cl = lev[cand]
            cs = np.cumsum(diff[cand])
            first = np.flatnonzero(np.r_[True, cl[1:] != cl[:-1]])
            offset = np.repeat(np.r_[0.0, cs][first], np.diff(np.r_[first, cl.size]))
            take = cand[cs - offset <= 0.5 * pool[cl]]
            np.add.at(total, lev[take], fine[take])
            np.add.at(err_total, lev[take], diff[take])
            np.subtract.at(pool, lev[take], diff[take])
            ok[take] = True
        bad = ~ok
        log.debug(
            "quadrature [%g, %g] round %d: %d nodes, %d panel-levels left",
            a, b, rounds, cache.node_count, int(bad.sum()),
        )
        if not bad.any():
            break
        worst = int(np.bincount(lev[bad], minlength=L).argmax())
        if np.abs(w[bad]).min() / 2 < min_width:
            raise QuadratureError(
                f"phase quadrature on [{a}, {b}] cannot resolve tracked level flat index {worst}: "
                f"panel width reached {np.abs(w[bad]).min():.1e}"
            )
        if cache.node_count - start_nodes + 4 * int(bad.sum()) > settings.max_nodes:
            raise QuadratureError(
                f"phase quadrature would exceed {settings.max_nodes} nodes on [{a}, {b}] "
                f"({int(bad.sum())} panel-levels unresolved; worst tracked level flat index {worst})"
            )
        m = 0.5 * (lo + hi)[bad]
        lo_b, hi_b, lev_b = lo[bad], hi[bad], lev[bad]
        # children (lo, m) and (m, hi) reuse five known values
        lo = np.concatenate([lo_b, m])
        hi = np.concatenate([m, hi_b])
        lev = np.concatenate([lev_b, lev_b])
        f_lo_new = np.concatenate([f_lo[bad], f_mid[bad]])
        f_mid_new = np.concatenate([f_q1[bad], f_q3[bad]])
        f_hi_new = np.concatenate([f_mid[bad], f_hi[bad]])
        f_lo, f_mid, f_hi = f_lo_new, f_mid_new, f_hi_new
        q = cache.fetch_some(np.concatenate([0.5 * (lo + 0.5 * (lo + hi)), 0.5 * (0.5 * (lo + hi) + hi)]), np.concatenate([lev, lev]))
        f_q1, f_q3 = q[: lev.size], q[lev.size :]
    return total, cache.node_count, float(err_total.max())


@dataclass(frozen=True, eq=False)
class PhaseTable:
    """Accumulated dynamical phases of one cycle.

    ``rates`` are path-averaged energies (flat even-then-odd ordering, ``nan``
    for untracked levels); ``phases = 2 tau * rates``.
    """

    model: ModelSpec
    protocol: RampProtocol
    rates: np.ndarray
    levels: tuple
    sizes: tuple
    nodes: int = 0
    rate_error: float = 0.0

    @property
    def phases(self) -> np.ndarray:
        return 2 * self.protocol.tau * self.rates

    @property
    def tracked(self) -> np.ndarray:
        return ~np.isnan(self.rates)

    def doublet_rates(self) -> tuple:
        n = min(self.levels)
        n0 = self.sizes[0]
        return self.rates[:n], self.rates[n0 : n0 + n]

    @property
    def delta_phi(self) -> np.ndarray:
        """``phi_{k,+} - phi_{k,-}`` for doublets tracked in both sectors."""
        rp, rm = self.doublet_rates()
        return 2 * self.protocol.tau * (rp - rm)

    def with_tau(self, tau: float) -> "PhaseTable":
        return replace(self, protocol=self.protocol.with_tau(tau))

    def phase_error(self) -> float:
        """Estimated quadrature error of the phases at this table's ``tau`` (radians)."""
        return 2 * self.protocol.tau * self.rate_error


def _normalize_levels(model, levels):
    sizes = tuple(len(b[0]) for b in affine_blocks(model))
    if levels is None:
        return sizes, sizes
    if np.isscalar(levels):
        levels = (int(levels), int(levels))
    levels = tuple(min(int(l), s) for l, s in zip(levels, sizes))
    return levels, sizes


def _table_from(model, protocol, tracked, levels, sizes, nodes, err):
    rates = np.full(sum(sizes), np.nan)
    rates[: levels[0]] = tracked[: levels[0]]
    rates[sizes[0] : sizes[0] + levels[1]] = tracked[levels[0] :]
    return PhaseTable(model, protocol, rates, levels, sizes, nodes, err)


def phase_table(
    model: ModelSpec,
    protocol: RampProtocol,
    quadrature: QuadratureSettings = QuadratureSettings(),
    levels=None,
    tau_max: float | None = None,
    workers: int | None = None,
) -> PhaseTable:
    """Accumulated phases ``phi_{k,p} = 2 tau / (g1 - g0) int_{g0}^{g1} E_{k,p}(g) dg``.

    Only eigenvalues are computed; levels are continued along the path by
    their within-sector ascending order.  ``levels`` limits tracking to the
    lowest levels per parity (int or pair).  The quadrature tolerance applies
    to phases at ``tau_max`` (defaults to ``protocol.tau``), so one table can
    be rescaled to every shorter ``tau``.
    """
    levels, sizes = _normalize_levels(model, levels)
    tau_ref = tau_max or protocol.tau
    if protocol.g1 == protocol.g0:
        e = _levels_at(model, protocol.g0, levels)
        return _table_from(model, protocol, e, levels, sizes, 1, 0.0)
    rate_tol = quadrature.tolerance / (2 * tau_ref)
    integral, nodes, err = integrate_levels(
        model,
        protocol.g0,
        protocol.g1,
        levels,
        rate_tol,
        quadrature,
        workers or default_workers(),
    )
    span = protocol.g1 - protocol.g0
    return _table_from(model, protocol, integral / span, levels, sizes, nodes, err / abs(span))


def phase_tables_for_g1(
    model: ModelSpec,
    g0: float,
    g1_values,
    tau: float,
    quadrature: QuadratureSettings = QuadratureSettings(),
    levels=None,
    tau_max: float | None = None,
    workers: int | None = None,
) -> list:
    """Phase tables for several turning points sharing ``g0``.

    The path integral is accumulated interval by interval, so the levels along
    ``[g0, g1]`` are shared between turning points.  Each interval starts from
    its share of ``quadrature.node_count`` (by length), so the uniform pass
    costs about as much as one table to the farthest turning point.  Returned
    in the order of ``g1_values``.
    """
    levels, sizes = _normalize_levels(model, levels)
    g1_values = [float(v) for v in g1_values]
    tau_ref = tau_max or tau
    rate_tol = quadrature.tolerance / (2 * tau_ref)
    cache = _LevelCache(model, levels, workers or default_workers())
    out = {}
    for sign in (1, -1):
        targets = sorted({v for v in g1_values if (v - g0) * sign > 0}, key=lambda v: (v - g0) * sign)
        acc = np.zeros(sum(levels))
        acc_err = 0.0
        prev = g0
        reach = abs(targets[-1] - g0) if targets else 1.0
        for v in targets:
            share = (quadrature.node_count - 1) * abs(v - prev) / reach
            nodes = 2 * max(2, math.ceil(share / 2)) + 1
            part, _, err = integrate_levels(model, prev, v, levels, rate_tol, replace(quadrature, node_count=nodes), cache=cache)
            acc = acc + part
            acc_err += err
            prev = v
            span = v - g0
            out[v] = _table_from(model, RampProtocol(g0, v, tau), acc / span, levels, sizes, cache.node_count, acc_err / abs(span))
    for v in g1_values:
        if v == g0:
            out[v] = phase_table(model, RampProtocol(g0, v, tau), quadrature, levels, tau_max, workers)
    return [out[v] for v in g1_values]


# --------------------------------------------------------------------------- adiabatic maps


_UNTRACKED_TOL = 1e-12


def _apply_phases(state: PureState, phases: np.ndarray) -> PureState:
    c = state.coefficients
    tracked = ~np.isnan(phases)
    lost = float(np.sum(np.abs(c[~tracked]) ** 2))
    if lost > _UNTRACKED_TOL:
        raise ValueError(f"state has population {lost:.2e} on levels the phase table does not track")
    ph = np.where(tracked, phases, 0.0)
    return PureState(c * np.exp(-1j * ph), state.model, state.decomp)


def adiabatic_cycle(eigen_state, phases: PhaseTable):
    """``c_{k,p} -> c_{k,p} exp(-i phi_{k,p})`` (pure or mixed, eigenbasis at ``g0``)."""
    if isinstance(eigen_state, MixedState):
        return eigen_state.map(lambda s: adiabatic_cycle(s, phases))
    if eigen_state.basis != "eigen":
        raise ValueError("adiabatic cycle acts on eigenbasis coefficients")
    if eigen_state.model != phases.model:
        raise ValueError("phase table belongs to a different model")
    if eigen_state.decomp.g != phases.protocol.g0:
        raise ValueError(f"state is expanded at g={eigen_state.decomp.g}, the cycle starts at g0={phases.protocol.g0}")
    return _apply_phases(eigen_state, phases.phases)


def hold_evolution(eigen_state, decomp: SpectralDecomposition, dt: float):
    """Free evolution under ``H(g0)`` for time ``dt``."""
    if dt < 0:
        raise ValueError("hold time must be non-negative")
    if isinstance(eigen_state, MixedState):
        return eigen_state.map(lambda s: hold_evolution(s, decomp, dt))
    if eigen_state.basis != "eigen" or eigen_state.decomp is not decomp:
        raise ValueError("hold evolution needs a state expanded in the given decomposition")
    return _apply_phases(eigen_state, decomp.energies * dt)
