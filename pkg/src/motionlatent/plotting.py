"""CSV and SVG output for clips and evaluation reports.

Clip CSV columns, one row per frame::

    frame      integer frame index
    time_s     frame / fps
    yaw_deg, pitch_deg, roll_deg   head angles in degrees
    tx, ty, tz                     translation
    scale                          isotropic scale
    expr_norm  Frobenius norm of the (K, 3) expression offsets

Report CSV columns are ``metric,value``. The SVG is written by hand with fixed
number formatting, so identical input gives identical bytes.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .clips import MotionClip
from .errors import InvalidArgumentError
from .metrics import METRIC_KEYS, EvalReport

CLIP_COLUMNS = ("frame", "time_s", "yaw_deg", "pitch_deg", "roll_deg", "tx", "ty", "tz", "scale", "expr_norm")
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def clip_table(clip: MotionClip) -> np.ndarray:
    n = len(clip)
    frames = np.arange(n, dtype=np.float64)
    angles = np.rad2deg(clip.pose[:, :3])
    norms = np.linalg.norm(clip.expression.reshape(n, -1), axis=1)
    return np.column_stack([frames, frames / clip.fps, angles, clip.pose[:, 3:], norms])


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def clip_csv(clip: MotionClip) -> str:
    rows = [[int(r[0])] + [f"{v:.9g}" for v in r[1:]] for r in clip_table(clip)]
    return _csv_text(CLIP_COLUMNS, rows)


def report_csv(report: EvalReport) -> str:
    m = report.to_dict()["metrics"]
    return _csv_text(("metric", "value"), [[k, "" if m[k] is None else f"{m[k]:.9g}"] for k in METRIC_KEYS])


def _polyline(xs, ys, x0, y0, w, h, lo, hi, color) -> str:
    span = hi - lo if hi > lo else 1.0
    n = max(len(xs) - 1, 1)
    pts = " ".join(f"{x0 + w * i / n:.2f},{y0 + h - h * (y - lo) / span:.2f}" for i, y in enumerate(ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>'


def _panel(title, series, y0, width=640, height=160) -> list[str]:
    x0, w, h = 60, width - 80, height - 40
    values = np.concatenate([s for _, s in series]) if series else np.zeros(1)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    out = [f'<text x="{x0}" y="{y0 + 14}" font-size="12">{title}</text>',
           f'<rect x="{x0}" y="{y0 + 20}" width="{w}" height="{h}" fill="none" stroke="#888"/>',
           f'<text x="{x0 - 6}" y="{y0 + 30}" font-size="9" text-anchor="end">{hi:.3g}</text>',
           f'<text x="{x0 - 6}" y="{y0 + 20 + h}" font-size="9" text-anchor="end">{lo:.3g}</text>']
    for k, (name, s) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        out.append(_polyline(np.arange(len(s)), s, x0, y0 + 20, w, h, lo, hi, color))
        out.append(f'<text x="{x0 + w - 4}" y="{y0 + 34 + 11 * k}" font-size="9" '
                   f'text-anchor="end" fill="{color}">{name}</text>')
    return out


def clip_svg(clip: MotionClip, width: int = 640) -> str:
    t = clip_table(clip)
    parts = _panel("head angles (deg)", [("yaw", t[:, 2]), ("pitch", t[:, 3]), ("roll", t[:, 4])], 0, width)
    parts += _panel("expression norm", [("|delta|", t[:, 9])], 170, width)
    return _svg(parts, width, 340)


def report_svg(report: EvalReport, width: int = 640) -> str:
    m = report.to_dict()["metrics"]
    items = [(k, m[k]) for k in METRIC_KEYS if m[k] is not None]
    top = max([abs(v) for _, v in items] + [1e-12])
    parts = []
    for i, (k, v) in enumerate(items):
        y = 10 + 24 * i
        bar = (width - 260) * abs(v) / top
        parts.append(f'<text x="150" y="{y + 13}" font-size="11" text-anchor="end">{k}</text>')
        parts.append(f'<rect x="160" y="{y}" width="{bar:.2f}" height="16" fill="{_COLORS[0]}"/>')
        parts.append(f'<text x="{165 + bar:.2f}" y="{y + 13}" font-size="10">{v:.4g}</text>')
    return _svg(parts, width, 20 + 24 * len(items))


def _svg(parts, width, height) -> str:
    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def emit_plots(item, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg`` for a clip or an evaluation report."""
    base = Path(path)
    if base.suffix in (".csv", ".svg"):
        base = base.with_suffix("")
    if isinstance(item, MotionClip):
        csv_text, svg_text = clip_csv(item), clip_svg(item)
    elif isinstance(item, EvalReport):
        csv_text, svg_text = report_csv(item), report_svg(item)
    else:
        raise InvalidArgumentError(f"cannot plot {type(item).__name__}")
    csv_path, svg_path = base.with_name(base.name + ".csv"), base.with_name(base.name + ".svg")
    csv_path.write_text(csv_text)
    svg_path.write_text(svg_text)
    return csv_path, svg_path
