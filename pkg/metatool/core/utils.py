"""Common utility functions for metatool."""

import csv
import io
import json
import math
import pathlib
from importlib import metadata
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from .context import get_root
from .fs import safe_append_text, safe_write_text


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays, tuples and sets into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted(to_jsonable(v) for v in value)
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return to_jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def dumps(data: Any) -> str:
    """Deterministic compact JSON (sorted keys) for logs that must diff byte-for-byte."""
    return json.dumps(to_jsonable(data), sort_keys=True, separators=(",", ":"))


def write_json(path: pathlib.Path, data: Any) -> None:
    """Write data as JSON to a file."""
    content = json.dumps(to_jsonable(data), indent=2, sort_keys=True)
    safe_write_text(path, content + "\n")


def append_jsonl(path: pathlib.Path, records: Iterable[Any]) -> None:
    """Append one JSON document per line."""
    safe_append_text(path, "".join(dumps(r) + "\n" for r in records))


def format_cell(value: Any) -> str:
    """Render a CSV cell; floats use a fixed significant-digit format."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".10g")
    return str(value)


def render_csv(rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> str:
    """Render rows to CSV text with ``\\n`` line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path: pathlib.Path, rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> None:
    """Write rows as CSV."""
    safe_write_text(path, render_csv(rows, columns))


def read_csv(path: pathlib.Path) -> List[Dict[str, str]]:
    """Read a CSV written by :func:`write_csv`."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def get_version() -> str:
    """Get the package version."""
    try:
        return metadata.version("metatool")
    except metadata.PackageNotFoundError:
        vfile = get_root().parent / "VERSION"
        if vfile.exists():
            return vfile.read_text().strip()
    return "0.0.0+unknown"
