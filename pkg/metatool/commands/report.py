"""Report command - re-render an experiment summary into its plot."""

import argparse

from ..core.context import get_output_dir
from ..core.errors import MetatoolError
from ..services.experiments import CHARTS
from ..services.reporting import load_summary, write_svg
from .experiment import _print_summary


def cmd_report(args: argparse.Namespace) -> int:
    """Execute the report command."""
    directory = get_output_dir() / args.id
    summary = directory / "summary.csv"
    if not summary.exists():
        raise MetatoolError(f"{summary} not found; run `metatool experiment {args.id}` first")
    rows = load_summary(summary)
    path = write_svg(directory / "plot.svg", rows, CHARTS[args.id])
    print(f"Experiment {args.id}: {len(rows)} rows")
    _print_summary(args.id, rows)
    print(str(path))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    """Register the report command."""
    parser = subparsers.add_parser("report", help="Re-render plot.svg from an experiment's summary.csv")
    parser.add_argument("id", choices=tuple(CHARTS), help="Experiment id")
    parser.set_defaults(func=cmd_report)
