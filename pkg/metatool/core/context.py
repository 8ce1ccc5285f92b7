"""Run context: output location and named sub-seeds."""

import hashlib
import os
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent
OUTPUT = pathlib.Path(os.environ.get("METATOOL_OUT", "metatool-out"))

_SEED_MASK = (1 << 64) - 1


def get_root() -> pathlib.Path:
    """Get the package root directory."""
    return ROOT


def get_output_dir() -> pathlib.Path:
    """Get the directory where reports are written."""
    return OUTPUT


def set_output_dir(path: pathlib.Path) -> None:
    """Set the report directory (CLI ``--out`` and tests)."""
    global OUTPUT
    OUTPUT = pathlib.Path(path)


def derive_seed(seed: int, component: str, episode: int = 0) -> int:
    """Stable 64-bit sub-seed for ``component`` at ``episode`` of a seeded run."""
    digest = hashlib.sha256(f"{int(seed) & _SEED_MASK}:{component}:{int(episode)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & _SEED_MASK
