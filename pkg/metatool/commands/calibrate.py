"""Calibrate command - fit a confidence temperature on scored designs."""

import argparse

from ..core.context import get_output_dir
from ..core.utils import write_json
from ..services.experiments import calibration_study
from ..services.reporting import prepare_output
from . import run_seed


def cmd_calibrate(args: argparse.Namespace) -> int:
    """Execute the calibrate command."""
    seed = run_seed(args)
    out_dir = prepare_output(get_output_dir() / "calibrate")
    row = calibration_study(args.settings, seed).rows[0]
    path = out_dir / "calibration.json"
    write_json(path, row)

    print(f"Temperature {row['temperature']:.4g} over {row['samples']} samples")
    print(f"  held-out ECE {row['ece_before']:.4f} -> {row['ece_after']:.4f}")
    print(str(path))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    """Register the calibrate command."""
    parser = subparsers.add_parser("calibrate", help="Fit temperature scaling for design confidence")
    parser.set_defaults(func=cmd_calibrate)
