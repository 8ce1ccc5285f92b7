"""Filesystem helpers for report emission."""

import os
import pathlib

from .errors import MetatoolError


def safe_mkdir(path: pathlib.Path, *, parents: bool = True, exist_ok: bool = True) -> None:
    """Create a directory."""
    path.mkdir(parents=parents, exist_ok=exist_ok)


def ensure_writable_dir(path: pathlib.Path) -> pathlib.Path:
    """Create ``path`` if needed and fail early when it cannot be written."""
    try:
        safe_mkdir(path)
    except OSError as exc:
        raise MetatoolError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise MetatoolError(f"output directory {path} is not writable")
    return path


def safe_write_text(path: pathlib.Path, content: str) -> None:
    """Write text to a file, creating parent directories; newlines are kept as ``\\n``."""
    safe_mkdir(path.parent)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)


def safe_append_text(path: pathlib.Path, content: str) -> None:
    """Append text to a file, creating parent directories."""
    safe_mkdir(path.parent)
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(content)
