"""Command-line entry point: ``run``, ``emit-plots`` and ``validate``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import ConfigError, ExperimentConfig, RunError, emit_plot_data, read_raw, run

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="metapersuasion", description="Meta-learning persuasion experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run both arms of an experiment and write CSV results")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=int)
    r.add_argument("--reps", type=int)
    r.add_argument("--out", type=Path)
    r.add_argument("--family")
    r.add_argument("--quiet", action="store_true", help="suppress progress output")

    e = sub.add_parser("emit-plots", help="turn a raw CSV into plot-ready JSON series")
    e.add_argument("--ledger", required=True, type=Path, help="raw.csv written by 'run'")
    e.add_argument("--out", type=Path, help="output JSON path (default: plot.json beside the ledger)")

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True, type=Path)
    return ap


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config).with_overrides(args.seed, args.reps, args.out, args.family)

    def progress(done, total):
        if not args.quiet:
            print(f"replication {done}/{total} done", file=sys.stderr, flush=True)

    ledger = run(cfg, progress=progress)
    for name, path in ledger.extras["files"].items():
        print(f"{name}: {path}")
    for arm in ("meta", "baseline"):
        mean, std = ledger.summary(arm)
        line = f"{arm}: final task-averaged regret {mean[-1]:.6g} (std {std[-1]:.3g})"
        if ledger.violation is not None:
            vm, vs = ledger.summary(arm, "violation")
            line += f", violation {vm[-1]:.6g} (std {vs[-1]:.3g})"
        print(line)
    return EXIT_OK


def _cmd_emit(args) -> int:
    try:
        ledger = read_raw(args.ledger)
    except (OSError, ValueError) as exc:
        raise ConfigError("ledger", str(exc)) from None
    out = args.out if args.out is not None else args.ledger.with_name("plot.json")
    print(emit_plot_data(ledger, out))
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    print(json.dumps(cfg.to_dict(), indent=1))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "emit-plots": _cmd_emit, "validate": _cmd_validate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunError as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
