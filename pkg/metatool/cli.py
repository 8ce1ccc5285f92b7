"""Main CLI entry point for metatool."""

import argparse
import logging
import sys

from .commands import setup_commands
from .core.config import load_config
from .core.context import set_output_dir
from .core.errors import ConfigError, MetatoolError
from .core.log import setup_logging
from .core.utils import get_version

logger = logging.getLogger(__name__)


def create_parser() -> argparse.ArgumentParser:
    """Create the main argument parser."""
    parser = argparse.ArgumentParser(
        prog="metatool",
        description="Metacognitive confidence engine for simulated tool design, discovery and invention",
    )
    parser.add_argument("--config", metavar="PATH", help="YAML/JSON config merged over the shipped defaults")
    parser.add_argument("--seed", type=int, default=None, help="Run seed (u64); experiments run only this seed")
    parser.add_argument("--out", metavar="DIR", default=None, help="Report directory (default: metatool-out)")
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors")
    parser.add_argument("--verbose", action="store_true", help="Log debug detail")
    parser.add_argument("--version", action="version", version=f"metatool {get_version()}")

    subparsers = parser.add_subparsers(dest="command", help="Available commands", required=True)
    setup_commands(subparsers)
    return parser


def main(argv=None) -> int:
    """Main entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)
    setup_logging(quiet=args.quiet, verbose=args.verbose)

    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("Error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.out:
        set_output_dir(args.out)

    try:
        args.settings = load_config(args.config)
        return args.func(args)
    except ConfigError as e:
        print(f"Config error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        return 130
    except (MetatoolError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
