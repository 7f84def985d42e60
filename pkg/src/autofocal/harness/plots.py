"""Minimal line-chart SVG writer for traces and gamma curves."""
from __future__ import annotations

import math
from typing import Sequence, Tuple
from xml.sax.saxutils import escape

_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def line_chart(path, series: Sequence[Tuple[str, Sequence[float], Sequence[float]]], title: str = "",
               xlabel: str = "", ylabel: str = "", width: int = 640, height: int = 400):
    """Write ``series`` (label, xs, ys) as one SVG chart. Non-finite points are dropped."""
    pts = [[(float(x), float(y)) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y)]
           for _, xs, ys in series]
    flat = [p for s in pts for p in s] or [(0.0, 0.0)]
    x0, x1 = min(p[0] for p in flat), max(p[0] for p in flat)
    y0, y1 = min(p[1] for p in flat), max(p[1] for p in flat)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    left, right, top, bottom = 60, 20, 30, 45
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">'
           f'{escape(xlabel)}</text>',
           f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>']
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{sx(fx):.1f}" y="{top + ph + 15}" text-anchor="middle" font-size="10">{fx:.3g}</text>')
        out.append(f'<text x="{left - 5}" y="{sy(fy) + 3:.1f}" text-anchor="end" font-size="10">{fy:.3g}</text>')
    for k, ((label, _, _), p) in enumerate(zip(series, pts)):
        color = _COLORS[k % len(_COLORS)]
        if p:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in p)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{left + pw - 5}" y="{top + 15 + 14 * k}" text-anchor="end" font-size="11" '
                   f'fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
