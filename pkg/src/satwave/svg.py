"""A tiny line-chart writer producing standalone SVG."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _ticks(lo, hi, log):
    if log:
        return [10.0 ** k for k in range(math.floor(lo), math.ceil(hi) + 1)]
    step = 10 ** math.floor(math.log10(max(hi - lo, 1e-300))) or 1.0
    start = math.ceil(lo / step) * step
    out, x = [], start
    while x <= hi + 1e-12 * step:
        out.append(x)
        x += step
    return out


def line_chart(series, path=None, *, logx=False, logy=False, title="", xlabel="t",
               ylabel="", width=640, height=420) -> str:
    """Render ``series`` = [(label, xs, ys), ...] and optionally write it to ``path``.

    Points that cannot be drawn on a log axis (nonpositive) are dropped.
    """
    fx = (lambda v: math.log10(v)) if logx else float
    fy = (lambda v: math.log10(v)) if logy else float
    clean = []
    for label, xs, ys in series:
        pts = [(fx(x), fy(y)) for x, y in zip(xs, ys)
               if math.isfinite(x) and math.isfinite(y)
               and (not logx or x > 0) and (not logy or y > 0)]
        clean.append((label, pts))
    allp = [p for _, pts in clean for p in pts] or [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="15" y="{mt + ph / 2}" transform="rotate(-90 15 {mt + ph / 2})" '
           f'text-anchor="middle">{escape(ylabel)}</text>']
    for v in _ticks(x0, x1, logx):
        pos = math.log10(v) if logx else v
        if x0 <= pos <= x1:
            out.append(f'<text x="{sx(pos):.1f}" y="{mt + ph + 15}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(y0, y1, logy):
        pos = math.log10(v) if logy else v
        if y0 <= pos <= y1:
            out.append(f'<text x="{ml - 5}" y="{sy(pos) + 4:.1f}" text-anchor="end">{v:g}</text>')
    for k, (label, pts) in enumerate(clean):
        color = PALETTE[k % len(PALETTE)]
        if pts:
            d = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in pts)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{d}"/>')
        out.append(f'<text x="{ml + 10}" y="{mt + 15 + 14 * k}" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    text = "\n".join(out)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
