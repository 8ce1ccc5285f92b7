"""Report emission: CSV tables, JSON-lines episode logs and SVG line charts."""

import logging
import math
import pathlib
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

from ..core.fs import ensure_writable_dir, safe_write_text
from ..core.utils import append_jsonl, format_cell, read_csv, write_csv

logger = logging.getLogger(__name__)

WIDTH = 640
HEIGHT = 400
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class ChartSpec:
    """Which columns to plot: one line per y column, or per value of ``group``."""

    title: str
    x: str
    ys: Tuple[str, ...]
    group: Optional[str] = None


def _number(value: Any) -> Optional[float]:
    if value is None or value == "":
        return None
    try:
        out = float(value)
    except (TypeError, ValueError):
        return None
    return out if math.isfinite(out) else None


def chart_series(rows: Sequence[Dict[str, Any]], spec: ChartSpec) -> Dict[str, List[Tuple[float, float]]]:
    """Mean of each y per x value (averaging over seeds), keyed by line label."""
    buckets: Dict[str, Dict[float, List[float]]] = {}
    for row in rows:
        x = _number(row.get(spec.x))
        if x is None:
            continue
        for y_col in spec.ys:
            y = _number(row.get(y_col))
            if y is None:
                continue
            label = y_col if spec.group is None else f"{spec.group}={format_cell(row.get(spec.group))}"
            if spec.group is not None and len(spec.ys) > 1:
                label = f"{label} {y_col}"
            buckets.setdefault(label, {}).setdefault(x, []).append(y)
    return {
        label: [(x, sum(v) / len(v)) for x, v in sorted(points.items())]
        for label, points in sorted(buckets.items())
    }


def _ticks(lo: float, hi: float, count: int = 5) -> List[float]:
    if hi <= lo:
        return [lo]
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def render_svg(rows: Sequence[Dict[str, Any]], spec: ChartSpec) -> str:
    """Polyline chart as standalone SVG markup."""
    series = chart_series(rows, spec)
    xs = [x for pts in series.values() for x, _ in pts] or [0.0, 1.0]
    ys = [y for pts in series.values() for _, y in pts] or [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(x: float) -> float:
        return MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2 * MARGIN)

    def py(y: float) -> float:
        return HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2 * MARGIN)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-size="14">{escape(spec.title)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        out.append(f'<text x="{px(t):.1f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" '
                   f'font-size="10">{t:.3g}</text>')
    for t in _ticks(y_lo, y_hi):
        out.append(f'<text x="{MARGIN - 6}" y="{py(t) + 3:.1f}" text-anchor="end" font-size="10">{t:.3g}</text>')
    out.append(f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
               f'font-size="12">{escape(spec.x)}</text>')

    for i, (label, pts) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = MARGIN + 14 * i
        out.append(f'<text x="{WIDTH - MARGIN + 4}" y="{ly}" font-size="10" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: pathlib.Path, rows: Sequence[Dict[str, Any]], spec: ChartSpec) -> pathlib.Path:
    safe_write_text(path, render_svg(rows, spec))
    return path


def write_table(out_dir: pathlib.Path, name: str, rows: Sequence[Dict[str, Any]], columns: Sequence[str],
                spec: Optional[ChartSpec] = None) -> List[pathlib.Path]:
    """Write ``<name>.csv`` (and ``<name>.svg`` when a chart is given) under ``out_dir``."""
    paths = [out_dir / f"{name}.csv"]
    write_csv(paths[0], rows, columns)
    if spec is not None:
        paths.append(write_svg(out_dir / f"{name}.svg", rows, spec))
    return paths


def write_episodes(path: pathlib.Path, records: Sequence[Dict[str, Any]]) -> pathlib.Path:
    """Rewrite the JSON-lines episode log from scratch."""
    safe_write_text(path, "")
    append_jsonl(path, records)
    return path


def prepare_output(out_dir: pathlib.Path) -> pathlib.Path:
    """Create (or check) the report directory before any computation runs."""
    ensure_writable_dir(out_dir)
    return out_dir


def load_summary(path: pathlib.Path) -> List[Dict[str, str]]:
    return read_csv(path)


def column_means(rows: Sequence[Dict[str, Any]], columns: Sequence[str],
                 group: Optional[str] = None) -> Dict[str, Dict[str, float]]:
    """Mean of each numeric column, optionally per value of ``group``."""
    sums: Dict[str, Dict[str, List[float]]] = {}
    for row in rows:
        key = "all" if group is None else format_cell(row.get(group))
        for col in columns:
            v = _number(row.get(col))
            if v is not None:
                sums.setdefault(key, {}).setdefault(col, []).append(v)
    return {k: {c: sum(v) / len(v) for c, v in cols.items()} for k, cols in sorted(sums.items())}
