"""Command line entry point ``aqis``.

Exit codes: 0 success, 1 failed validation checks, 2 configuration error,
3 numerical failure (quadrature, integrator, eigensolver, untracked population), 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .propagation import IntegrationError, QuadratureError, default_workers
from .runner import ConfigError, SweepGrid, load_config, load_preset, resolve_config, run_from_config, sweep
from .states import LeakageError
from .tridiag import TridiagonalConvergenceError

log = logging.getLogger("aqis")

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4

# metric set run by each single-purpose subcommand
_SUBCOMMAND_METRICS = {
    "spectrum": ["spectrum"],
    "phases": ["phases"],
    "echo": ["echo"],
    "otoc": ["otoc"],
}


def _common(p):
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: ./aqis-out/<name>)")
    p.add_argument("--threads", type=int, default=None, help="worker count (default: $AQIS_THREADS or all cores)")
    p.add_argument("--seed", type=int, default=None, help="accepted for interface stability; pipelines are deterministic")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aqis", description="Adiabatic quantum information scrambling experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (
        ("spectrum", "parity-resolved spectra over the config's g_values"),
        ("phases", "accumulated phase table of one cycle"),
        ("cycle", "the config's full pipeline for a single run"),
        ("echo", "adiabatic Loschmidt echo"),
        ("otoc", "adiabatic out-of-time-order correlator"),
        ("sweep", "repeat the pipeline over the config's sweep grid"),
    ):
        _common(sub.add_parser(name, help=text))
    fig = sub.add_parser("fig", help="run a bundled figure preset")
    fig.add_argument("number", type=int, choices=range(2, 8))
    _common(fig)
    val = sub.add_parser("validate", help="run the oracle suite")
    _common(val)
    return ap


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        return args.threads
    try:
        return default_workers()
    except ValueError as exc:
        raise ConfigError("AQIS_THREADS", str(exc)) from None


def _run(args) -> int:
    workers = _threads(args)
    if args.command == "validate":
        from .oracle import run_validation_suite, write_report_csv

        out = args.out or Path("aqis-out") / "validate"
        out.mkdir(parents=True, exist_ok=True)
        reports = run_validation_suite(workers=workers)
        write_report_csv(reports, out / "validate.csv")
        for r in reports:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.check}: deviation {r.deviation:.3e} (tolerance {r.tolerance:.0e})")
        return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECKS

    if args.command == "fig":
        raw = load_preset(f"fig{args.number}")
        if args.config is not None:
            raise ConfigError("--config", "fig runs use the bundled preset; use 'cycle' or 'sweep' for custom configs")
    else:
        if args.config is None:
            raise ConfigError("--config", f"the {args.command} subcommand needs a configuration file")
        raw = load_config(args.config)
    if args.command in _SUBCOMMAND_METRICS:
        raw = {**raw, "metrics": _SUBCOMMAND_METRICS[args.command]}
        raw.pop("sweep", None)
    cfg = resolve_config(raw)
    out = args.out or Path("aqis-out") / cfg["name"]

    if args.command == "sweep" or (args.command == "fig" and "sweep" in cfg):
        if "sweep" not in cfg:
            raise ConfigError("sweep", "the config has no sweep section")
        rows = sweep(cfg, out, SweepGrid.from_config(cfg["sweep"]), workers)
        failed = [r for r in rows if r["errors"]]
        print(f"{len(rows)} sweep points written to {out / 'sweep.csv'} ({len(failed)} with errors)")
        return EXIT_OK
    manifest = run_from_config(cfg, out, workers)
    print(f"run {manifest.run_id[:12]} wrote {len(manifest.outputs)} files to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(level)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, IntegrationError, TridiagonalConvergenceError, LeakageError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # anything left after config validation is a failure of the computation itself
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        log.removeHandler(handler)


if __name__ == "__main__":
    sys.exit(main())
