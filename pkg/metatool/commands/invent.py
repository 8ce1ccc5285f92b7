"""Invent command - run the closed evaluator/designer/user loop."""

import argparse

from ..core.context import get_output_dir
from ..services.experiments import COLUMNS, impasse_trace
from ..services.reporting import ChartSpec, prepare_output, write_episodes, write_svg, write_table
from . import run_seed


def cmd_invent(args: argparse.Namespace) -> int:
    """Execute the invent command."""
    seed = run_seed(args)
    out_dir = prepare_output(get_output_dir() / "invent")
    result = impasse_trace(args.settings, seed)

    paths = write_table(out_dir, "summary", result.rows, COLUMNS["e2"])
    paths.append(write_svg(out_dir / "plot.svg", result.rows,
                           ChartSpec("episode trace", "episode", ("success_rate", "decision", "model"))))
    paths.append(write_episodes(out_dir / "episodes.jsonl", result.records))

    inventions = [r for r in result.records if r["invention"]]
    print(f"Ran {len(result.records)} episodes; {len(inventions)} invention(s)")
    for rec in inventions:
        inv = rec["invention"]
        print(f"  episode {rec['episode']}: {inv['tool']['id']} via {inv['method']} ({'+'.join(inv['combo'])})")
    for path in paths:
        print(str(path))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    """Register the invent command."""
    parser = subparsers.add_parser("invent", help="Run the impasse-driven invention loop")
    parser.set_defaults(func=cmd_invent)
