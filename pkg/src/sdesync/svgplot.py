"""Minimal deterministic SVG line/scatter plots.

Generates plots straight from arrays with fixed float formatting, so a
given (data, options) pair always produces identical bytes; no plotting
dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["Series", "line_plot"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]

_WIDTH, _HEIGHT = 720, 480
_ML, _MR, _MT, _MB = 72, 24, 40, 56  # margins


@dataclass(frozen=True)
class Series:
    name: str
    xs: tuple
    ys: tuple


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _tick_label(v: float, log: bool) -> str:
    value = 10.0**v if log else v
    return f"{value:.3g}"


def line_plot(series, path, *, title: str = "", xlabel: str = "",
              ylabel: str = "", logx: bool = False, logy: bool = False,
              markers: bool = True) -> None:
    """Write a line plot of the series to ``path``.

    Log axes transform the data; nonpositive values are dropped from the
    affected series (with NaNs) rather than raising.
    """
    cleaned = []
    for s in series:
        pts = []
        for x, y in zip(s.xs, s.ys):
            x, y = float(x), float(y)
            if math.isnan(x) or math.isnan(y):
                continue
            if logx:
                if x <= 0:
                    continue
                x = math.log10(x)
            if logy:
                if y <= 0:
                    continue
                y = math.log10(y)
            pts.append((x, y))
        cleaned.append((s.name, pts))

    all_pts = [p for _, pts in cleaned for p in pts]
    if all_pts:
        xlo = min(p[0] for p in all_pts)
        xhi = max(p[0] for p in all_pts)
        ylo = min(p[1] for p in all_pts)
        yhi = max(p[1] for p in all_pts)
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, 0.0, 1.0
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    xpad = 0.04 * (xhi - xlo)
    ypad = 0.06 * (yhi - ylo)
    xlo, xhi = xlo - xpad, xhi + xpad
    ylo, yhi = ylo - ypad, yhi + ypad

    pw = _WIDTH - _ML - _MR
    ph = _HEIGHT - _MT - _MB

    def sx(x):
        return _ML + (x - xlo) / (xhi - xlo) * pw

    def sy(y):
        return _MT + ph - (y - ylo) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" '
        'stroke="#333333" stroke-width="1"/>',
    ]
    if title:
        out.append(f'<text x="{_WIDTH // 2}" y="24" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="15">{title}</text>')

    for tx in _ticks(xlo + xpad, xhi - xpad):
        px = sx(tx)
        out.append(f'<line x1="{_fmt(px)}" y1="{_MT + ph}" x2="{_fmt(px)}" '
                   f'y2="{_MT + ph + 5}" stroke="#333333"/>')
        out.append(f'<text x="{_fmt(px)}" y="{_MT + ph + 20}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{_tick_label(tx, logx)}</text>')
    for ty in _ticks(ylo + ypad, yhi - ypad):
        py = sy(ty)
        out.append(f'<line x1="{_ML - 5}" y1="{_fmt(py)}" x2="{_ML}" '
                   f'y2="{_fmt(py)}" stroke="#333333"/>')
        out.append(f'<text x="{_ML - 8}" y="{_fmt(py + 4)}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{_tick_label(ty, logy)}</text>')
    if xlabel:
        out.append(f'<text x="{_ML + pw // 2}" y="{_HEIGHT - 14}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="13">{xlabel}</text>')
    if ylabel:
        out.append(f'<text x="18" y="{_MT + ph // 2}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="13" '
                   f'transform="rotate(-90 18 {_MT + ph // 2})">{ylabel}</text>')

    for i, (name, pts) in enumerate(cleaned):
        color = _COLORS[i % len(_COLORS)]
        if len(pts) > 1:
            coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                       'stroke-width="1.5"/>')
        if markers:
            for x, y in pts:
                out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="2.5" '
                           f'fill="{color}"/>')
        ly = _MT + 16 + 16 * i
        out.append(f'<line x1="{_ML + pw - 130}" y1="{ly - 4}" x2="{_ML + pw - 110}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_ML + pw - 104}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{name}</text>')

    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
