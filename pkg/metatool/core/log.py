"""Logging setup shared by the CLI and the experiment harness."""

import logging
import sys

_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def setup_logging(*, quiet: bool = False, verbose: bool = False) -> None:
    """Route metatool log records to stderr at the requested verbosity."""
    level = logging.INFO
    if quiet:
        level = logging.WARNING
    elif verbose:
        level = logging.DEBUG

    root = logging.getLogger("metatool")
    root.setLevel(level)
    if not any(getattr(h, "_metatool", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(_FORMAT, datefmt="%H:%M:%S"))
        handler._metatool = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.propagate = False
