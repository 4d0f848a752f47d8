"""Command-line front end: run, compare, validate.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 a target
was not reached and --strict-target was given.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import ConfigError, load_config
from .event_engine import SimulationError
from .harness import compare, learning_rate_warnings, run_experiment
from .local_trainer import DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_TARGET = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fstsim",
        description="Simulate federated simultaneous training of multiple models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config and write metrics")
    p_run.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_run.add_argument("--out", required=True, help="output directory for metrics and summary")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--runs", type=int, default=None, help="override the replica count")
    p_run.add_argument(
        "--strict-target",
        action="store_true",
        help="exit with code 3 if any task misses its target in any replica",
    )

    p_cmp = sub.add_parser("compare", help="run two configs and report timing/quality deltas")
    p_cmp.add_argument("--a", required=True, help="baseline config path")
    p_cmp.add_argument("--b", required=True, help="candidate config path")
    p_cmp.add_argument(
        "--paired",
        action="store_true",
        help="require identical seeds/replicas so both sides share randomness",
    )
    p_cmp.add_argument("--out", default=None, help="directory for report.json and curve CSVs")

    p_val = sub.add_parser("validate", help="check a config and print learning-rate verdicts")
    p_val.add_argument("--config", required=True, help="path to a JSON experiment config")

    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    summary = run_experiment(cfg, out_dir=args.out, seed=args.seed, runs=args.runs)
    print(json.dumps(summary, indent=2))
    if args.strict_target:
        missed = [
            tid
            for tid, entry in summary["tasks"].items()
            if not entry["time_to_target"]["all_reached"]
        ]
        if missed:
            print(f"targets not reached for tasks: {', '.join(missed)}", file=sys.stderr)
            return EXIT_TARGET
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    cfg_a = load_config(args.a)
    cfg_b = load_config(args.b)
    report = compare(cfg_a, cfg_b, paired=args.paired, out_dir=args.out)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    warnings = learning_rate_warnings(cfg)
    print(f"config ok: {len(cfg.tasks)} task(s), algorithm {cfg.algorithm}")
    if warnings:
        for w in warnings:
            print(f"warning: {w}")
    else:
        print("learning rates satisfy the convergence bounds")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_validate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, DivergenceError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
