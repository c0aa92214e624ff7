"""standalone svg charts built as strings"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

WIDTH, HEIGHT = 640, 420
PAD = 56
PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948")


def _esc(text) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _document(title: str, body: List[str], width: int = WIDTH, height: int = HEIGHT) -> str:
    return "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" role="img" aria-label="{_esc(title)}">',
        f"<title>{_esc(title)}</title>",
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14" font-family="sans-serif">{_esc(title)}</text>',
        *body,
        "</svg>",
        "",
    ])


def _finite(values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr[np.isfinite(arr)]


class _Axes:
    """maps data coordinates onto the plotting area"""

    def __init__(self, xlim: Tuple[float, float], ylim: Tuple[float, float],
                 width: int = WIDTH, height: int = HEIGHT):
        self.x0, self.x1 = xlim if xlim[1] > xlim[0] else (xlim[0] - 0.5, xlim[0] + 0.5)
        self.y0, self.y1 = ylim if ylim[1] > ylim[0] else (ylim[0] - 0.5, ylim[0] + 0.5)
        self.width, self.height = width, height

    def x(self, v: float) -> float:
        return PAD + (v - self.x0) / (self.x1 - self.x0) * (self.width - 2 * PAD)

    def y(self, v: float) -> float:
        return self.height - PAD - (v - self.y0) / (self.y1 - self.y0) * (self.height - 2 * PAD)

    def frame(self, xlabel: str, ylabel: str, ticks: int = 5) -> List[str]:
        left, right = PAD, self.width - PAD
        top, bottom = PAD, self.height - PAD
        out = [f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
               'fill="none" stroke="#333" stroke-width="1"/>']
        for v in np.linspace(self.x0, self.x1, ticks):
            out.append(f'<text x="{self.x(v):.1f}" y="{bottom + 16}" text-anchor="middle" '
                       f'font-size="10" font-family="sans-serif">{v:.3g}</text>')
        for v in np.linspace(self.y0, self.y1, ticks):
            out.append(f'<text x="{left - 6}" y="{self.y(v) + 3:.1f}" text-anchor="end" '
                       f'font-size="10" font-family="sans-serif">{v:.3g}</text>')
        out.append(f'<text x="{self.width / 2:.1f}" y="{self.height - 14}" text-anchor="middle" '
                   f'font-size="12" font-family="sans-serif">{_esc(xlabel)}</text>')
        out.append(f'<text x="16" y="{self.height / 2:.1f}" text-anchor="middle" font-size="12" '
                   f'font-family="sans-serif" transform="rotate(-90 16 {self.height / 2:.1f})">{_esc(ylabel)}</text>')
        return out

    def polyline(self, xs, ys, color: str, width: float = 1.5, dash: str = "") -> str:
        pts = " ".join(f"{self.x(a):.1f},{self.y(b):.1f}" for a, b in zip(xs, ys))
        dashed = f' stroke-dasharray="{dash}"' if dash else ""
        return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{dashed}/>'


def _legend(labels: Sequence[str], width: int = WIDTH) -> List[str]:
    out = []
    for i, label in enumerate(labels):
        y = PAD + 8 + 14 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{width - PAD - 110}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{width - PAD - 96}" y="{y + 1}" font-size="10" font-family="sans-serif">{_esc(label)}</text>')
    return out


def _padded(values: np.ndarray, frac: float = 0.05) -> Tuple[float, float]:
    if values.size == 0:
        return 0.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo or 1.0
    return lo - frac * span, hi + frac * span


def scatter_identity_svg(title: str, y_true, y_pred, xlabel: str = "measured BMD (g/cm^2)",
                         ylabel: str = "predicted BMD (g/cm^2)", note: str = "") -> str:
    """predicted vs measured with the y = x line"""
    both = _finite(np.concatenate([np.ravel(y_true), np.ravel(y_pred)]))
    lim = _padded(both)
    ax = _Axes(lim, lim)
    body = ax.frame(xlabel, ylabel)
    body.append(ax.polyline(lim, lim, "#999", 1.0, "4 3"))
    for a, b in zip(np.ravel(y_true), np.ravel(y_pred)):
        if np.isfinite(a) and np.isfinite(b):
            body.append(f'<circle cx="{ax.x(a):.1f}" cy="{ax.y(b):.1f}" r="3" fill="{PALETTE[0]}" fill-opacity="0.7"/>')
    if note:
        body.append(f'<text x="{PAD + 8}" y="{PAD + 16}" font-size="11" font-family="sans-serif">{_esc(note)}</text>')
    return _document(title, body)


def bar_svg(title: str, labels: Sequence[str], values: Sequence[float],
            errors: Optional[Sequence[Tuple[float, float]]] = None, ylabel: str = "") -> str:
    """one bar per label; errors are optional (lo, hi) whiskers in data units"""
    vals = np.asarray(values, dtype=np.float64)
    tops = _finite(vals if errors is None else np.concatenate([vals, np.ravel(errors)]))
    ymax = float(tops.max()) * 1.1 if tops.size and tops.max() > 0 else 1.0
    ax = _Axes((0.0, float(max(len(labels), 1))), (0.0, ymax))
    body = ax.frame("", ylabel)
    for i, (label, v) in enumerate(zip(labels, vals)):
        left, right = ax.x(i + 0.15), ax.x(i + 0.85)
        if np.isfinite(v):
            body.append(f'<rect x="{left:.1f}" y="{ax.y(v):.1f}" width="{right - left:.1f}" '
                        f'height="{ax.y(0) - ax.y(v):.1f}" fill="{PALETTE[0]}"/>')
        if errors is not None and all(np.isfinite(errors[i])):
            cx = ax.x(i + 0.5)
            lo, hi = errors[i]
            body.append(f'<line x1="{cx:.1f}" y1="{ax.y(lo):.1f}" x2="{cx:.1f}" y2="{ax.y(hi):.1f}" stroke="#333"/>')
        body.append(f'<text x="{ax.x(i + 0.5):.1f}" y="{HEIGHT - PAD + 30}" text-anchor="middle" '
                    f'font-size="9" font-family="sans-serif">{_esc(label)}</text>')
    return _document(title, body)


def grouped_bar_svg(title: str, groups: Sequence[str], series: Dict[str, Sequence[float]], ylabel: str = "") -> str:
    """bars per group, one colour per series"""
    names = list(series)
    ax = _Axes((0.0, float(max(len(groups), 1))), (0.0, 1.05))
    body = ax.frame("", ylabel)
    width = 0.8 / max(len(names), 1)
    for s, name in enumerate(names):
        for g, v in enumerate(series[name]):
            if not np.isfinite(v):
                continue
            left = ax.x(g + 0.1 + s * width)
            right = ax.x(g + 0.1 + (s + 1) * width)
            body.append(f'<rect x="{left:.1f}" y="{ax.y(v):.1f}" width="{right - left:.1f}" '
                        f'height="{ax.y(0) - ax.y(v):.1f}" fill="{PALETTE[s % len(PALETTE)]}"/>')
    for g, label in enumerate(groups):
        body.append(f'<text x="{ax.x(g + 0.5):.1f}" y="{HEIGHT - PAD + 30}" text-anchor="middle" '
                    f'font-size="10" font-family="sans-serif">{_esc(label)}</text>')
    body += _legend(names)
    return _document(title, body)


def curve_band_svg(title: str, x, y, lo, hi, xlabel: str, ylabel: str, note: str = "",
                   diagonal: bool = False) -> str:
    """a curve on [0, 1]^2 with a shaded band"""
    ax = _Axes((0.0, 1.0), (0.0, 1.0))
    body = ax.frame(xlabel, ylabel)
    upper = " ".join(f"{ax.x(a):.1f},{ax.y(b):.1f}" for a, b in zip(x, hi))
    lower = " ".join(f"{ax.x(a):.1f},{ax.y(b):.1f}" for a, b in zip(x[::-1], lo[::-1]))
    body.append(f'<polygon points="{upper} {lower}" fill="{PALETTE[0]}" fill-opacity="0.2" stroke="none"/>')
    if diagonal:
        body.append(ax.polyline((0.0, 1.0), (0.0, 1.0), "#999", 1.0, "4 3"))
    body.append(ax.polyline(x, y, PALETTE[0], 2.0))
    if note:
        body.append(f'<text x="{PAD + 8}" y="{PAD + 16}" font-size="11" font-family="sans-serif">{_esc(note)}</text>')
    return _document(title, body)


def line_svg(title: str, x, series: Dict[str, Sequence[float]], xlabel: str, ylabel: str) -> str:
    """one polyline per named series sharing the x values"""
    ys = _finite(np.concatenate([np.asarray(v, dtype=np.float64) for v in series.values()])) if series else np.zeros(0)
    xs = _finite(x)
    ax = _Axes(_padded(xs, 0.0), _padded(ys))
    body = ax.frame(xlabel, ylabel)
    for i, (name, values) in enumerate(series.items()):
        body.append(ax.polyline(x, values, PALETTE[i % len(PALETTE)]))
    body += _legend(list(series))
    return _document(title, body)


def write_svg(path, svg: str) -> Path:
    path = Path(path)
    path.write_text(svg, encoding="utf-8")
    return path
