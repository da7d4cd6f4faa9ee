"""Config-driven pipelines: model -> state -> protocol -> metrics -> CSV files.

A run is described by one YAML document (see ``aqis/presets``).  Every run
writes one CSV per metric, a ``manifest.json`` and a matplotlib script that
re-draws the figure panels from those CSVs only.  Sweeps repeat a run over a
grid of one parameter, writing each point to its own directory and a summary
table ``sweep.csv``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .models import ModelSpec, lmg, observable_matrix, qrm
from .propagation import (
    EvolutionControls,
    QuadratureSettings,
    RampProtocol,
    adiabatic_cycle,
    default_workers,
    evolve_exact,
    phase_tables_for_g1,
)
from .spectrum import doublet_pairing, spectral_decomposition
from .states import (
    MixedState,
    energy_distribution,
    expand_in_eigenbasis,
    expectation,
    microcanonical_sb,
    observable_distribution,
    qrm_coherent,
    thermal_sb,
    to_physical,
)

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "METRICS",
    "PRESETS",
    "RunManifest",
    "SweepGrid",
    "load_config",
    "load_preset",
    "resolve_config",
    "run_id",
    "run_from_config",
    "sweep",
    "emit_plot_scripts",
    "write_csv",
]

METRICS = (
    "spectrum",
    "distributions",
    "trajectory",
    "phases",
    "uniformity",
    "tau_sweep",
    "echo",
    "otoc",
    "order_parameter",
)
PRESETS = ("fig2", "fig3", "fig4", "fig5", "fig6", "fig7")
SWEEP_AXES = {
    "tau": ("protocol", "tau"),
    "N_mc": ("state", "n_mc"),
    "g1": ("protocol", "g1"),
    "N": ("model", "N"),
    "beta": ("state", "beta"),
    "alpha": ("state", "alpha"),
}
_INT_AXES = {"N_mc", "N"}


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# --------------------------------------------------------------------------- config


def load_config(path) -> dict:
    """Parse a YAML run configuration (not yet validated)."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return raw


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("aqis.presets").joinpath(f"{name}.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def _number(section, key, path, *, positive=False, nonneg=False, integer=False, default=None, required=True):
    if key not in section or section[key] is None:
        if default is not None or not required:
            return default
        raise ConfigError(f"{path}.{key}", "missing")
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{path}.{key}", "must be finite")
    if integer:
        if int(v) != v:
            raise ConfigError(f"{path}.{key}", f"expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}", f"must be positive, got {v!r}")
    if nonneg and v < 0:
        raise ConfigError(f"{path}.{key}", f"must be non-negative, got {v!r}")
    return v


def _section(raw, key, required=True):
    sec = raw.get(key)
    if sec is None:
        if required:
            raise ConfigError(key, "missing section")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(key, "must be a mapping")
    return sec


def _check_keys(section, allowed, path):
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigError(f"{path}.{extra[0]}", f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _grid(spec, path, *, positive=False):
    """``{start, stop, count[, spacing]}`` or an explicit list -> ascending list of floats."""
    if isinstance(spec, (list, tuple)):
        vals = []
        for i, v in enumerate(spec):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{path}[{i}]", f"expected a finite number, got {v!r}")
            vals.append(float(v))
    elif isinstance(spec, dict):
        _check_keys(spec, {"start", "stop", "count", "spacing"}, path)
        start = _number(spec, "start", path)
        stop = _number(spec, "stop", path)
        count = _number(spec, "count", path, integer=True, positive=True)
        spacing = spec.get("spacing", "linear")
        if spacing == "log":
            if not 0 < start < stop:
                raise ConfigError(path, "log spacing needs 0 < start < stop")
            vals = np.geomspace(start, stop, count).tolist()
        elif spacing == "linear":
            vals = np.linspace(start, stop, count).tolist()
        else:
            raise ConfigError(f"{path}.spacing", f"expected 'linear' or 'log', got {spacing!r}")
    else:
        raise ConfigError(path, "expected a list or a {start, stop, count} mapping")
    if not vals:
        raise ConfigError(path, "empty grid")
    if len(vals) > 1 and np.any(np.diff(vals) <= 0):
        raise ConfigError(path, "values must be strictly increasing")
    if positive and vals[0] <= 0:
        raise ConfigError(path, "values must be positive")
    return vals


_SETTINGS_DEFAULTS = {
    "dynamics": "adiabatic",
    "observable": None,
    "taus": {"start": 1e3, "stop": 1e4, "count": 256},
    "dt": {"start": 1e-4, "stop": 10.0, "count": 201, "spacing": "log"},
    "echo_tag": "phase-rate",
    "k_range": [0, 200],
    "bins": 20,
    "g_values": None,
    "g1_values": None,
    "tau_sweep_g1": None,
    "quadrature": {},
    "evolution": {},
}


def resolve_config(raw: dict) -> dict:
    """Validate a raw config and fill in defaults.

    The result is the canonical form hashed into the run id.  Raises
    :class:`ConfigError` naming the offending key.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    raw = copy.deepcopy(raw)
    _check_keys(raw, {"name", "model", "protocol", "state", "metrics", "settings", "sweep"}, "<root>")
    name = raw.get("name", "run")
    if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
        raise ConfigError("name", f"expected a plain file-name stem, got {name!r}")

    m = _section(raw, "model")
    kind = str(m.get("kind", "")).upper()
    if kind == "LMG":
        _check_keys(m, {"kind", "N"}, "model")
        N = _number(m, "N", "model", integer=True, positive=True)
        if N % 2:
            raise ConfigError("model.N", f"spin count must be even, got {N}")
        model = {"kind": "LMG", "N": N}
    elif kind == "QRM":
        _check_keys(m, {"kind", "ratio", "n_max"}, "model")
        model = {
            "kind": "QRM",
            "ratio": _number(m, "ratio", "model", positive=True),
            "n_max": _number(m, "n_max", "model", integer=True, positive=True, default=1000),
        }
    else:
        raise ConfigError("model.kind", f"expected 'lmg' or 'qrm', got {m.get('kind')!r}")

    metrics = raw.get("metrics")
    if not isinstance(metrics, list) or not metrics:
        raise ConfigError("metrics", "need a non-empty list of metrics")
    for i, name_ in enumerate(metrics):
        if name_ not in METRICS:
            raise ConfigError(f"metrics[{i}]", f"unknown metric {name_!r}; choose from {', '.join(METRICS)}")
    if len(set(metrics)) != len(metrics):
        raise ConfigError("metrics", "duplicate metric")
    only_spectrum = set(metrics) == {"spectrum"}
    # phase tables alone need no initial state
    stateless = set(metrics) <= {"spectrum", "phases", "uniformity"}

    p = _section(raw, "protocol", required=not only_spectrum)
    _check_keys(p, {"g0", "g1", "tau", "shape"}, "protocol")
    protocol = {
        "g0": _number(p, "g0", "protocol", default=0.0 if only_spectrum else None),
        "g1": _number(p, "g1", "protocol", default=0.0 if only_spectrum else None),
        "tau": _number(p, "tau", "protocol", positive=True, default=1e3 if only_spectrum else None),
        "shape": p.get("shape", "linear"),
    }
    if protocol["shape"] != "linear":
        raise ConfigError("protocol.shape", f"only 'linear' ramps are supported, got {protocol['shape']!r}")

    s = _section(raw, "state", required=not stateless)
    skind = s.get("kind", "none" if stateless else None)
    if skind == "microcanonical":
        _check_keys(s, {"kind", "n_mc"}, "state")
        state = {"kind": skind, "n_mc": _number(s, "n_mc", "state", integer=True, positive=True)}
    elif skind == "thermal":
        _check_keys(s, {"kind", "beta"}, "state")
        state = {"kind": skind, "beta": _number(s, "beta", "state", positive=True)}
    elif skind == "coherent":
        _check_keys(s, {"kind", "alpha"}, "state")
        if model["kind"] != "QRM":
            raise ConfigError("state.kind", "coherent states are defined for the QRM only")
        state = {"kind": skind, "alpha": _number(s, "alpha", "state")}
    elif skind == "none" and stateless:
        state = {"kind": "none"}
    else:
        raise ConfigError("state.kind", f"expected 'microcanonical', 'thermal' or 'coherent', got {skind!r}")
    if state["kind"] in ("microcanonical", "thermal") and model["kind"] != "LMG":
        raise ConfigError("state.kind", f"{state['kind']} states are built for the LMG model")

    st = _section(raw, "settings", required=False)
    _check_keys(st, set(_SETTINGS_DEFAULTS), "settings")
    settings = {}
    settings["dynamics"] = st.get("dynamics", "adiabatic")
    if settings["dynamics"] not in ("adiabatic", "exact"):
        raise ConfigError("settings.dynamics", f"expected 'adiabatic' or 'exact', got {settings['dynamics']!r}")
    obs = st.get("observable") or ("Sx" if model["kind"] == "LMG" else "x")
    if obs not in (("Sx",) if model["kind"] == "LMG" else ("x",)):
        raise ConfigError("settings.observable", f"{obs!r} is not the order parameter of {model['kind']}")
    settings["observable"] = obs
    settings["taus"] = _grid(st.get("taus", _SETTINGS_DEFAULTS["taus"]), "settings.taus", positive=True)
    settings["dt"] = _grid(st.get("dt", _SETTINGS_DEFAULTS["dt"]), "settings.dt")
    if settings["dt"][0] < 0:
        raise ConfigError("settings.dt", "time mismatches must be non-negative")
    settings["echo_tag"] = st.get("echo_tag", "phase-rate")
    if settings["echo_tag"] not in ("phase-rate", "hold-at-g0", "literal"):
        raise ConfigError("settings.echo_tag", f"unknown interpretation {settings['echo_tag']!r}")
    kr = st.get("k_range", [0, 200])
    if not (isinstance(kr, list) and len(kr) == 2 and all(isinstance(v, int) for v in kr) and 0 <= kr[0] < kr[1]):
        raise ConfigError("settings.k_range", f"expected [lo, hi) with 0 <= lo < hi, got {kr!r}")
    settings["k_range"] = kr
    settings["bins"] = _number(st, "bins", "settings", integer=True, positive=True, default=20)
    settings["g_values"] = _grid(st["g_values"], "settings.g_values") if st.get("g_values") is not None else None
    settings["g1_values"] = _grid(st["g1_values"], "settings.g1_values") if st.get("g1_values") is not None else None
    settings["tau_sweep_g1"] = (
        _grid(st["tau_sweep_g1"], "settings.tau_sweep_g1") if st.get("tau_sweep_g1") is not None else None
    )
    q = st.get("quadrature") or {}
    if not isinstance(q, dict):
        raise ConfigError("settings.quadrature", "must be a mapping")
    _check_keys(q, {"node_count", "tolerance", "max_nodes"}, "settings.quadrature")
    dq = QuadratureSettings()
    settings["quadrature"] = {
        "node_count": _number(q, "node_count", "settings.quadrature", integer=True, positive=True, default=dq.node_count),
        "tolerance": _number(q, "tolerance", "settings.quadrature", positive=True, default=dq.tolerance),
        "max_nodes": _number(q, "max_nodes", "settings.quadrature", integer=True, positive=True, default=dq.max_nodes),
    }
    ev = st.get("evolution") or {}
    if not isinstance(ev, dict):
        raise ConfigError("settings.evolution", "must be a mapping")
    _check_keys(ev, {"step_control", "samples", "convergence_tol", "max_halvings"}, "settings.evolution")
    de = EvolutionControls()
    settings["evolution"] = {
        "step_control": _number(ev, "step_control", "settings.evolution", positive=True, default=de.step_control),
        "samples": _number(ev, "samples", "settings.evolution", integer=True, positive=True, default=de.samples),
        "convergence_tol": _number(ev, "convergence_tol", "settings.evolution", positive=True, default=de.convergence_tol),
        "max_halvings": _number(ev, "max_halvings", "settings.evolution", integer=True, nonneg=True, default=de.max_halvings),
    }
    if settings["evolution"]["step_control"] > 0.05:
        raise ConfigError("settings.evolution.step_control", "must not exceed 0.05")

    # cross-checks between sections
    if "spectrum" in metrics and settings["g_values"] is None:
        raise ConfigError("settings.g_values", "the spectrum metric needs a coupling grid")
    if "order_parameter" in metrics and settings["g1_values"] is None:
        raise ConfigError("settings.g1_values", "the order_parameter metric needs a g1 grid")
    if "trajectory" in metrics and settings["dynamics"] != "exact":
        raise ConfigError("settings.dynamics", "the trajectory metric needs dynamics: exact")
    pure_only = {"trajectory", "echo", "otoc"} & set(metrics)
    if state["kind"] == "thermal" and (pure_only or settings["dynamics"] == "exact"):
        key = "settings.dynamics" if not pure_only else "metrics"
        raise ConfigError(key, "thermal mixtures support adiabatic distributions, tau_sweep and order_parameter only")

    out = {"name": name, "model": model, "protocol": protocol, "state": state, "metrics": list(metrics), "settings": settings}
    if raw.get("sweep") is not None:
        sw = _section(raw, "sweep")
        _check_keys(sw, {"axis", "values"}, "sweep")
        out["sweep"] = SweepGrid.from_config(sw).to_config()
        _apply_axis(out, out["sweep"]["axis"], out["sweep"]["values"][0])  # axis must apply
    return out


def run_id(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a resolved config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def _apply_axis(config: dict, axis: str, value) -> dict:
    section, key = SWEEP_AXES[axis]
    if key not in config[section]:
        raise ConfigError("sweep.axis", f"axis {axis!r} does not apply to this pipeline ({section} has no {key!r})")
    out = copy.deepcopy(config)
    out.pop("sweep", None)
    out[section][key] = int(value) if axis in _INT_AXES else float(value)
    return resolve_config(out)


# --------------------------------------------------------------------------- CSV


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def write_csv(path, header, columns) -> Path:
    """Write equal-length ``columns`` with 17 significant digits."""
    path = Path(path)
    n = {len(c) for c in columns}
    if len(n) > 1:
        raise ValueError(f"{path.name}: columns of unequal length {sorted(n)}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])
    return path


# --------------------------------------------------------------------------- pipeline


def _model_of(cfg) -> ModelSpec:
    m = cfg["model"]
    return lmg(m["N"]) if m["kind"] == "LMG" else qrm(m["ratio"], m["n_max"])


def _quadrature_of(cfg) -> QuadratureSettings:
    return QuadratureSettings(**cfg["settings"]["quadrature"])


class _Context:
    """Lazily built ingredients of one run, shared by its metrics."""

    def __init__(self, cfg: dict, workers: int):
        self.cfg = cfg
        self.workers = workers
        self.model = _model_of(cfg)
        p = cfg["protocol"]
        self.protocol = RampProtocol(p["g0"], p["g1"], p["tau"])
        self._decomp = None
        self._state = None
        self.tables = {}  # g1 -> PhaseTable (tau = protocol.tau)

    @property
    def obs(self):
        return observable_matrix(self.model, self.cfg["settings"]["observable"])

    @property
    def decomp(self):
        if self._decomp is None:
            self._decomp = spectral_decomposition(self.model, self.protocol.g0)
        return self._decomp

    @property
    def doublets(self):
        return doublet_pairing(self.decomp, self.obs)

    @property
    def state(self):
        """Initial state in the eigenbasis at ``g0``."""
        if self._state is None:
            s = self.cfg["state"]
            if s["kind"] == "microcanonical":
                try:
                    self._state = microcanonical_sb(self.decomp, self.doublets, s["n_mc"])
                except ValueError as exc:
                    raise ConfigError("state.n_mc", str(exc)) from None
            elif s["kind"] == "thermal":
                self._state = thermal_sb(self.decomp, self.doublets, s["beta"])
            else:
                try:
                    phys = qrm_coherent(self.model, s["alpha"], self.protocol.g0)
                except ValueError as exc:
                    raise ConfigError("model.n_max", str(exc)) from None
                self._state = expand_in_eigenbasis(phys, self.decomp)
        return self._state

    def needs_tables(self) -> bool:
        m = set(self.cfg["metrics"])
        adiabatic = self.cfg["settings"]["dynamics"] == "adiabatic"
        return bool(m & {"phases", "uniformity", "tau_sweep", "echo", "otoc", "order_parameter"}) or (
            "distributions" in m and adiabatic
        )

    def table_request(self):
        """``(key, g1 values, levels, tau_max)`` for the phase tables this run reads."""
        from .metrics import tracked_levels

        st = self.cfg["settings"]
        metrics = set(self.cfg["metrics"])
        margin = 2 if "otoc" in metrics else 0
        lv = (0, 0) if self.cfg["state"]["kind"] == "none" else tracked_levels(self.state, margin)
        if metrics & {"uniformity", "phases"}:
            hi = st["k_range"][1]
            lv = tuple(max(a, hi) for a in lv)
        g1s = {self.protocol.g1}
        for key in ("g1_values", "tau_sweep_g1"):
            if st[key] is not None and ("order_parameter" in metrics if key == "g1_values" else "tau_sweep" in metrics):
                g1s.update(st[key])
        tau_max = self.protocol.tau
        if metrics & {"tau_sweep", "otoc", "order_parameter"}:
            tau_max = max(tau_max, st["taus"][-1])
        key = (self.model, self.protocol.g0, self.protocol.tau, json.dumps(st["quadrature"], sort_keys=True))
        return key, g1s, lv, tau_max


def _compute_tables(requests, workers):
    """One shared quadrature pass per (model, g0) over the union of all requests."""
    groups = {}
    for key, g1s, lv, tau_max in requests:
        g = groups.setdefault(key, [set(), (0, 0), 0.0])
        g[0] |= g1s
        g[1] = tuple(max(a, b) for a, b in zip(g[1], lv))
        g[2] = max(g[2], tau_max)
    out = {}
    for key, (g1s, lv, tau_max) in groups.items():
        model, g0, tau, qjson = key
        g1_sorted = sorted(g1s)
        log.info("phase tables for %s: g0=%g, g1 in %s, levels %s, tau_max %g", model.label(), g0, g1_sorted, lv, tau_max)
        tables = phase_tables_for_g1(
            model, g0, g1_sorted, tau, QuadratureSettings(**json.loads(qjson)), levels=lv, tau_max=tau_max, workers=workers
        )
        out[key] = dict(zip(g1_sorted, tables))
    return out


# --------------------------------------------------------------------------- metrics


def _distribution_files(out: Path, stem: str, dist):
    return write_csv(out / f"{stem}.csv", ["support_value", "probability"], [dist.support, dist.probabilities])


def _m_spectrum(ctx, out):
    gs = ctx.cfg["settings"]["g_values"]
    cols = [[], [], [], []]
    for g in gs:
        dec = spectral_decomposition(ctx.model, g, vectors=False)
        cols[0].extend([g] * dec.energies.size)
        cols[1].extend(dec.k.tolist())
        cols[2].extend(dec.parity.tolist())
        cols[3].extend(dec.energies.tolist())
    return [write_csv(out / "spectrum.csv", ["g", "k", "parity", "energy"], cols)], {}


def _exact_trajectory(ctx):
    if getattr(ctx, "_trajectory", None) is None:
        ev = ctx.cfg["settings"]["evolution"]
        controls = EvolutionControls(**ev)
        ctx._trajectory = evolve_exact(to_physical(ctx.state), ctx.model, ctx.protocol, controls)
    return ctx._trajectory


def _m_distributions(ctx, out):
    obs = ctx.obs
    dbl = ctx.doublets
    init = ctx.state
    if ctx.cfg["settings"]["dynamics"] == "exact":
        final = expand_in_eigenbasis(_exact_trajectory(ctx).final, ctx.decomp)
    else:
        final = adiabatic_cycle(init, ctx.tables[ctx.protocol.g1])
    name = obs.name.lower()
    pe0, pe1 = energy_distribution(init, dbl), energy_distribution(final, dbl)
    files = [
        _distribution_files(out, f"distribution_{name}_initial", observable_distribution(init, obs)),
        _distribution_files(out, f"distribution_{name}_final", observable_distribution(final, obs)),
        _distribution_files(out, "distribution_energy_initial", pe0),
        _distribution_files(out, "distribution_energy_final", pe1),
    ]
    # P(E) supports can differ by numerical noise after exact dynamics; compare on a common grid
    E = np.union1d(pe0.support, pe1.support)
    p0 = np.zeros(E.size)
    p1 = np.zeros(E.size)
    p0[np.searchsorted(E, pe0.support)] = pe0.probabilities
    p1[np.searchsorted(E, pe1.support)] = pe1.probabilities
    summary = {
        "initial_expectation": expectation(init, obs),
        "final_expectation": expectation(final, obs),
        "energy_tv_distance": 0.5 * float(np.abs(p0 - p1).sum()),
    }
    if isinstance(init, MixedState):
        summary["discarded_weight"] = init.discarded_weight
    return files, summary


def _m_trajectory(ctx, out):
    tr = _exact_trajectory(ctx)
    f = write_csv(
        out / "trajectory.csv",
        ["t", "g", "obs_sx_or_x", "obs_sz_or_sigmaz", "energy", "norm"],
        [tr.times, tr.g, tr.order_parameter, tr.polarization, tr.energy, tr.norm],
    )
    return [f], {
        "initial_order_parameter": float(tr.order_parameter[0]),
        "final_order_parameter": float(tr.order_parameter[-1]),
        "initial_polarization": float(tr.polarization[0]),
        "final_polarization": float(tr.polarization[-1]),
        "initial_energy": float(tr.energy[0]),
        "final_energy": float(tr.energy[-1]),
        "step_convergence": tr.convergence if tr.convergence is not None else math.nan,
    }


def _m_phases(ctx, out):
    table = ctx.tables[ctx.protocol.g1]
    n0, n1 = table.sizes
    tracked = table.tracked
    flat = np.flatnonzero(tracked)
    # parity 0 even, 1 odd (as in spectrum.csv)
    parity = np.where(flat < n0, 0, 1)
    k = np.where(flat < n0, flat, flat - n0)
    dphi = np.full(flat.size, math.nan)
    dd = np.mod(table.delta_phi, 2 * np.pi)
    even = parity == 0
    sel = k < dd.size
    dphi[even & sel] = dd[k[even & sel]]
    f = write_csv(
        out / "phase_table.csv",
        ["k", "parity", "phase_rad", "phase_rate", "delta_phi_mod_2pi"],
        [k, parity, table.phases[flat], table.rates[flat], dphi],
    )
    return [f], {"quadrature_nodes": table.nodes, "phase_error_rad": table.phase_error()}


def _m_uniformity(ctx, out):
    from .metrics import phase_uniformity

    st = ctx.cfg["settings"]
    rep = phase_uniformity(ctx.tables[ctx.protocol.g1], tuple(st["k_range"]), st["bins"])
    files = [
        write_csv(out / "uniformity.csv", ["k", "delta_phi_mod_2pi"], [rep.k, rep.sample]),
        write_csv(
            out / "uniformity_histogram.csv",
            ["bin_lo", "bin_hi", "count"],
            [rep.hist_edges[:-1], rep.hist_edges[1:], rep.hist_counts],
        ),
    ]
    return files, {"ks_statistic": rep.D, "ks_pvalue": rep.pvalue, "sample_size": rep.n}


def _observable_on_support(ctx, extra_steps=0):
    from .metrics import _members, _reach, _support, eigenbasis_observable

    S = np.unique(np.concatenate([_support(s.coefficients) for _, s in _members(ctx.state)]))
    if extra_steps:
        S = _reach(ctx.decomp, ctx.obs, S, extra_steps)
    return eigenbasis_observable(ctx.decomp, ctx.obs, S)


def _m_tau_sweep(ctx, out):
    from .metrics import scrambling_sigma, tau_sweep

    st = ctx.cfg["settings"]
    V = _observable_on_support(ctx)
    g1s = st["tau_sweep_g1"] or [ctx.protocol.g1]
    files, summary = [], {}
    for g1 in g1s:
        series = tau_sweep(ctx.state, ctx.tables[g1], V, st["taus"])
        stem = "tau_sweep" if st["tau_sweep_g1"] is None else f"tau_sweep_g1={_label(g1)}"
        files.append(write_csv(out / f"{stem}.csv", ["tau", "expectation"], [series.taus, series.values]))
        sfx = "" if st["tau_sweep_g1"] is None else f"_g1={_label(g1)}"
        summary[f"tau_sweep_mean{sfx}"] = series.mean
        summary[f"tau_sweep_sigma{sfx}"] = scrambling_sigma(series)
        summary["initial_expectation"] = series.initial
    return files, summary


def _m_echo(ctx, out):
    from .metrics import loschmidt_adiabatic

    st = ctx.cfg["settings"]
    curve = loschmidt_adiabatic(ctx.state, ctx.tables[ctx.protocol.g1], st["dt"], st["echo_tag"], ctx.decomp)
    f = write_csv(out / "echo.csv", ["dt", "L"], [curve.dt, curve.L])
    try:
        slope = curve.decay_slope()
    except ValueError:
        slope = math.nan
    return [f], {"echo_tag": curve.tag, "echo_decay_slope": slope, "echo_max_revival": curve.max_revival()}


def _m_otoc(ctx, out):
    from .metrics import otoc_series

    series = otoc_series(ctx.state, ctx.tables[ctx.protocol.g1], ctx.obs, ctx.cfg["settings"]["taus"])
    f = write_csv(
        out / "otoc.csv",
        ["tau", "re", "im", "rescaled"],
        [series.taus, series.values.real, series.values.imag, series.rescaled],
    )
    return [f], {
        "otoc_O0": series.O0,
        "otoc_max_abs_rescaled": float(series.rescaled_abs.max()),
        "otoc_max_rescaled": float(series.rescaled.max()),
    }


def _m_order_parameter(ctx, out):
    from .metrics import tau_sweep

    st = ctx.cfg["settings"]
    V = _observable_on_support(ctx)
    means, stds, initial = [], [], math.nan
    for g1 in st["g1_values"]:
        series = tau_sweep(ctx.state, ctx.tables[g1], V, st["taus"])
        means.append(series.mean)
        stds.append(math.sqrt(series.variance))
        initial = series.initial
    f = write_csv(out / "order_parameter.csv", ["g1", "mean", "std"], [st["g1_values"], means, stds])
    return [f], {"initial_expectation": initial}


_METRIC_FNS = {
    "spectrum": _m_spectrum,
    "distributions": _m_distributions,
    "trajectory": _m_trajectory,
    "phases": _m_phases,
    "uniformity": _m_uniformity,
    "tau_sweep": _m_tau_sweep,
    "echo": _m_echo,
    "otoc": _m_otoc,
    "order_parameter": _m_order_parameter,
}


def _label(v) -> str:
    """Shortest round-tripping text for a grid value (used in file names)."""
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


# --------------------------------------------------------------------------- runs


@dataclass
class RunManifest:
    run_id: str
    config: dict
    workers: int
    output_dir: str
    tool_version: str = __version__
    outputs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def model(self):
        return self.config["model"]

    @property
    def protocol(self):
        return self.config["protocol"]

    @property
    def state(self):
        return self.config["state"]

    @property
    def metrics(self):
        return self.config["metrics"]

    def to_json(self) -> str:
        doc = {
            "run_id": self.run_id,
            "tool_version": self.tool_version,
            "model": self.model,
            "protocol": self.protocol,
            "state": self.state,
            "metrics": self.metrics,
            "workers": self.workers,
            "output_dir": self.output_dir,
            "config": self.config,
            "outputs": self.outputs,
            "summary": self.summary,
        }
        return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _as_config(config) -> dict:
    if isinstance(config, (str, os.PathLike)):
        config = load_config(config)
    return resolve_config(config)


def _execute(cfg: dict, out: Path, workers: int, tables=None) -> RunManifest:
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Context(cfg, workers)
    if ctx.needs_tables():
        req = ctx.table_request()
        if tables is None:
            tables = _compute_tables([req], workers)
        ctx.tables = tables[req[0]]
    manifest = RunManifest(run_id(cfg), cfg, workers, str(out))
    for name in cfg["metrics"]:
        log.info("%s: metric %s", cfg["name"], name)
        files, summary = _METRIC_FNS[name](ctx, out)
        manifest.outputs.extend(f.name for f in files)
        manifest.summary.update(summary)
    return manifest


def run_from_config(config, out, workers: int | None = None, plots: bool = True) -> RunManifest:
    """Execute one pipeline and write CSVs, ``manifest.json`` and a plot script into ``out``.

    ``config`` is a path or a (raw or resolved) mapping.  A ``sweep`` section,
    if present, is ignored here; use :func:`sweep`.
    """
    cfg = _as_config(config)
    cfg.pop("sweep", None)
    out = Path(out)
    workers = workers or default_workers()
    manifest = _execute(cfg, out, workers)
    if plots:
        manifest.outputs.extend(p.name for p in emit_plot_scripts(out, cfg["name"], manifest.outputs))
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest


# --------------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepGrid:
    axis: str
    values: tuple

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError("sweep.axis", f"unknown axis {self.axis!r}; choose from {', '.join(SWEEP_AXES)}")
        vals = tuple(int(v) if self.axis in _INT_AXES else float(v) for v in self.values)
        if not vals:
            raise ConfigError("sweep.values", "empty grid")
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError("sweep.values", "values must be finite")
        if self.axis in _INT_AXES and any(int(v) != v for v in self.values):
            raise ConfigError("sweep.values", f"axis {self.axis} takes integers")
        d = np.diff(vals)
        if len(vals) > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ConfigError("sweep.values", "values must be strictly monotone")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_config(cls, section: dict) -> "SweepGrid":
        vals = section.get("values")
        if isinstance(vals, dict):
            vals = _grid(vals, "sweep.values")
        if not isinstance(vals, (list, tuple)):
            raise ConfigError("sweep.values", "expected a list")
        for i, v in enumerate(vals):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"sweep.values[{i}]", f"expected a number, got {v!r}")
        return cls(str(section.get("axis")), tuple(vals))

    def to_config(self) -> dict:
        return {"axis": self.axis, "values": list(self.values)}


def _point_dir(out: Path, grid: SweepGrid, value) -> Path:
    return out / "points" / f"{grid.axis}={_label(value)}"


def _write_sweep_table(out: Path, grid: SweepGrid, done: dict) -> Path:
    keys = sorted({k for r in done.values() if r["summary"] for k in r["summary"] if k != "echo_tag"})
    header = [grid.axis, "run_id", *keys, "errors"]
    rows = []
    for v in grid.values:
        r = done.get(v)
        if r is None:
            continue
        s = r["summary"] or {}
        vals = [s.get(k) for k in keys]
        rows.append([v, r["run_id"], *[math.nan if x is None else x for x in vals], r["error"] or ""])
    path = out / "sweep.csv"
    tmp = path.with_suffix(".csv.tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    os.replace(tmp, path)
    return path


def sweep(config, out, grid: SweepGrid | None = None, workers: int | None = None, plots: bool = True) -> list:
    """Run ``config`` once per grid value; returns the rows of ``sweep.csv`` as dicts.

    Completed points (a ``summary.json`` whose run id matches) are skipped, so
    an interrupted sweep resumes where it stopped.  Phase tables for all
    pending points are computed in one shared pass before the points run.
    Per-point failures are recorded in the ``errors`` column.
    """
    cfg = _as_config(config)
    if grid is None:
        if "sweep" not in cfg:
            raise ConfigError("sweep", "no sweep grid given")
        grid = SweepGrid.from_config(cfg["sweep"])
    base = {k: v for k, v in cfg.items() if k != "sweep"}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or default_workers()
    points = {v: _apply_axis(base, grid.axis, v) for v in grid.values}

    done, pending = {}, []
    for v, pcfg in points.items():
        f = _point_dir(out, grid, v) / "summary.json"
        if f.exists():
            try:
                rec = json.loads(f.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                rec = None
            if rec and rec.get("run_id") == run_id(pcfg) and not rec.get("error"):
                done[v] = rec
                continue
        pending.append(v)
    log.info("sweep over %s: %d points, %d already complete", grid.axis, len(points), len(done))

    tables = {}
    if pending:
        # tables depend on every grid point, so resumed and fresh sweeps agree
        reqs = []
        for v, pcfg in points.items():
            ctx = _Context(pcfg, workers)
            try:
                if ctx.needs_tables():
                    reqs.append(ctx.table_request())
            except Exception as exc:  # recorded per point below
                log.warning("sweep point %s=%s: %s", grid.axis, v, exc)
        tables = _compute_tables(reqs, workers)

    lock = threading.Lock()

    def run_point(v):
        pdir = _point_dir(out, grid, v)
        pcfg = points[v]
        rec = {"axis": grid.axis, "value": v, "run_id": run_id(pcfg), "summary": None, "error": None}
        try:
            m = _execute(pcfg, pdir, 1, tables)
            if plots:
                m.outputs.extend(p.name for p in emit_plot_scripts(pdir, pcfg["name"], m.outputs))
            (pdir / "manifest.json").write_text(m.to_json(), encoding="utf-8")
            rec["summary"] = _jsonable(m.summary)
        except Exception as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            log.warning("sweep point %s=%s failed: %s", grid.axis, v, rec["error"])
        pdir.mkdir(parents=True, exist_ok=True)
        (pdir / "summary.json").write_text(json.dumps(_jsonable(rec), sort_keys=True) + "\n", encoding="utf-8")
        with lock:
            done[v] = rec
            _write_sweep_table(out, grid, done)
        return rec

    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(pending) or 1))) as pool:
        list(pool.map(run_point, pending))
    path = _write_sweep_table(out, grid, done)
    if plots and "tau_sweep" in base["metrics"] and grid.axis == "N_mc":
        _emit_sweep_plot(out, base["name"], grid)
    manifest = RunManifest(run_id({**base, "sweep": grid.to_config()}), {**base, "sweep": grid.to_config()}, workers, str(out))
    manifest.outputs = [path.name]
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------- plot scripts

_PLOT_HEAD = '''"""Redraw the {name} panels from the CSV files next to this script."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

HERE = Path(__file__).resolve().parent


def load(name):
    return np.genfromtxt(HERE / name, delimiter=",", names=True)

'''

_PLOT_SNIPPETS = {
    "spectrum.csv": '''
d = load("spectrum.csv")
fig, ax = plt.subplots()
for parity, style in ((0, "-"), (1, "--")):
    sel = d["parity"] == parity
    for k in np.unique(d["k"][sel])[:40]:
        row = sel & (d["k"] == k)
        ax.plot(d["g"][row], d["energy"][row], style, lw=0.6, color="C0" if parity == 0 else "C3")
ax.set_xlabel("g")
ax.set_ylabel("E")
fig.savefig(HERE / "spectrum.png", dpi=150)
''',
    "distribution_energy_initial.csv": '''
fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
for ax, stem, label in ((axes[0], "distribution_{obs}", "{obs_label}"), (axes[1], "distribution_energy", "E")):
    for stage, mk in (("initial", "-"), ("final", "o")):
        d = load(f"{{stem}}_{{stage}}.csv")
        ax.plot(d["support_value"], d["probability"], mk, ms=3, label=stage)
    ax.set_xlabel(label)
    ax.set_ylabel("P")
    ax.legend()
fig.tight_layout()
fig.savefig(HERE / "distributions.png", dpi=150)
''',
    "trajectory.csv": '''
d = load("trajectory.csv")
fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
half = d["t"] <= d["t"][-1] / 2
axes[0].plot(d["g"][half], d["obs_sx_or_x"][half], label="F")
axes[0].plot(d["g"][~half], d["obs_sx_or_x"][~half], label="B")
axes[0].set_xlabel("g(t)")
axes[0].set_ylabel("order parameter")
axes[0].legend()
axes[1].plot(d["t"], d["obs_sz_or_sigmaz"], label="polarization")
axes[1].plot(d["t"], d["energy"], label="energy")
axes[1].set_xlabel("t")
axes[1].legend()
fig.tight_layout()
fig.savefig(HERE / "trajectory.png", dpi=150)
''',
    "uniformity.csv": '''
d = load("uniformity.csv")
fig, axes = plt.subplots(1, 2, figsize=(8, 4))
th = np.linspace(0, 2 * np.pi, 400)
axes[0].plot(np.cos(th), np.sin(th), "k-", lw=0.5)
axes[0].plot(np.cos(d["delta_phi_mod_2pi"]), np.sin(d["delta_phi_mod_2pi"]), "o", ms=3)
axes[0].set_aspect("equal")
h = load("uniformity_histogram.csv")
axes[1].bar(h["bin_lo"], h["count"], width=h["bin_hi"] - h["bin_lo"], align="edge")
axes[1].axhline(h["count"].sum() / h["count"].size, color="k", ls="--")
axes[1].set_xlabel("delta phi mod 2 pi")
fig.tight_layout()
fig.savefig(HERE / "uniformity.png", dpi=150)
''',
    "tau_sweep": '''
fig, ax = plt.subplots()
for f in sorted(HERE.glob("tau_sweep*.csv")):
    d = load(f.name)
    ax.plot(d["tau"], d["expectation"], lw=0.8, label=f.stem)
ax.set_xlabel("tau")
ax.set_ylabel("post-cycle expectation")
ax.legend()
fig.savefig(HERE / "tau_sweep.png", dpi=150)
''',
    "echo.csv": '''
d = load("echo.csv")
fig, ax = plt.subplots()
sel = d["dt"] > 0
ax.loglog(d["dt"][sel], d["L"][sel])
guide = d["dt"][sel]
i = np.argmax(d["L"][sel] < 0.5)
ax.loglog(guide, 0.5 * guide[i] / guide, "k--", lw=0.8, label="1/dt")
ax.set_ylim(1e-3, 1.5)
ax.set_xlabel("dt")
ax.set_ylabel("L")
ax.legend()
fig.savefig(HERE / "echo.png", dpi=150)
''',
    "otoc.csv": '''
d = load("otoc.csv")
fig, ax = plt.subplots()
ax.plot(d["tau"], d["rescaled"])
ax.set_xlabel("tau")
ax.set_ylabel("rescaled OTOC")
fig.savefig(HERE / "otoc.png", dpi=150)
''',
    "order_parameter.csv": '''
d = load("order_parameter.csv")
fig, ax = plt.subplots()
ax.errorbar(d["g1"], d["mean"], yerr=d["std"], fmt="o-", capsize=3)
ax.set_xlabel("g1")
ax.set_ylabel("tau-averaged order parameter")
fig.savefig(HERE / "order_parameter.png", dpi=150)
''',
}


def emit_plot_scripts(out, name: str, outputs) -> list:
    """Write ``plot_<name>.py`` covering every CSV in ``outputs``; none if there is nothing to draw."""
    out = Path(out)
    outputs = list(outputs)
    for f in outputs:
        if f.endswith(".csv") and not (out / f).exists():
            raise FileNotFoundError(out / f)
    parts = []
    for key, snippet in _PLOT_SNIPPETS.items():
        if key == "tau_sweep":
            present = any(f.startswith("tau_sweep") for f in outputs)
        else:
            present = key in outputs
        if present:
            obs = next((f.split("_")[1] for f in outputs if f.startswith("distribution_") and "energy" not in f), "sx")
            parts.append(snippet.format(obs=obs, obs_label=obs) if "{obs}" in snippet else snippet)
    if not parts:
        return []
    path = out / f"plot_{name}.py"
    path.write_text(_PLOT_HEAD.format(name=name) + "".join(parts), encoding="utf-8")
    return [path]


def _emit_sweep_plot(out: Path, name: str, grid: SweepGrid):
    text = _PLOT_HEAD.format(name=name + " sweep") + f'''
d = load("sweep.csv")
x, y = d["{grid.axis}"], d["tau_sweep_sigma"]
ok = np.isfinite(y) & (y > 0)
slope, icpt = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
fig, ax = plt.subplots()
ax.loglog(x[ok], y[ok], "o")
ax.loglog(x[ok], np.exp(icpt) * x[ok] ** slope, "k--", label=f"slope {{slope:.3f}}")
ax.set_xlabel("{grid.axis}")
ax.set_ylabel("sigma")
ax.legend()
fig.savefig(HERE / "scaling.png", dpi=150)
'''
    (out / f"plot_{name}_sweep.py").write_text(text, encoding="utf-8")
