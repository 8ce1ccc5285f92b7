"""Experiment command - run one of the canned experiments over its seeds."""

import argparse

from ..core.context import get_output_dir
from ..services.experiments import COLUMNS, EXPERIMENTS, run_experiment
from ..services.reporting import column_means


def _print_summary(exp_id: str, rows) -> None:
    numeric = [c for c in COLUMNS[exp_id] if c not in ("experiment", "seed", "tool", "impasse", "method", "arm")]
    group = {"e1": "beta", "e3": "method", "e5": "arm"}.get(exp_id)
    for key, means in column_means(rows, numeric, group).items():
        text = " ".join(f"{c}={v:.4g}" for c, v in means.items())
        print(f"  {key}: {text}")


def cmd_experiment(args: argparse.Namespace) -> int:
    """Execute the experiment command."""
    seeds = None if args.seed is None else [args.seed]
    output = run_experiment(args.id, args.settings, get_output_dir(), seeds)
    print(f"Experiment {args.id}: {len(output.rows)} rows")
    _print_summary(args.id, output.rows)
    for path in output.paths:
        print(str(path))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    """Register the experiment command."""
    parser = subparsers.add_parser("experiment", help="Run a canned experiment (e1..e5)")
    parser.add_argument("id", choices=EXPERIMENTS, help="Experiment id")
    parser.set_defaults(func=cmd_experiment)
