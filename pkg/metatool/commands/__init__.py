"""Command implementations for metatool."""

import argparse

from ..core.config import Settings


def run_seed(args: argparse.Namespace) -> int:
    """Seed for single-run commands: ``--seed`` or the configured env seed."""
    settings: Settings = args.settings
    return settings.env.seed if args.seed is None else args.seed


def setup_commands(subparsers: argparse._SubParsersAction) -> None:
    """Set up all registered commands."""
    from . import calibrate, design, discover, experiment, invent, report, select

    design.register(subparsers)
    discover.register(subparsers)
    invent.register(subparsers)
    select.register(subparsers)
    calibrate.register(subparsers)
    experiment.register(subparsers)
    report.register(subparsers)
