"""Minimal SVG line plots for profile curves."""

from __future__ import annotations

import math

_W, _H, _M = 480, 360, 40


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_plot(series, xlim=(0.0, 1.0), ylim=None, title: str = "", reference_diagonal: bool = True) -> str:
    """Render ``[(label, xs, ys), ...]`` as an SVG document string.

    Non-finite points are skipped.  The optional dashed diagonal ``y = x``
    marks the disc reference in normalized units.
    """
    pts = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys) if math.isfinite(y)]
    if ylim is None:
        top = max([1.0] + [y for _, y in pts])
        ylim = (0.0, top * 1.05)
    x0, x1 = xlim
    y0, y1 = ylim
    if x1 <= x0 or y1 <= y0:
        raise ValueError("empty plot range")

    def px(x):
        return _M + (x - x0) / (x1 - x0) * (_W - 2 * _M)

    def py(y):
        return _H - _M - (y - y0) / (y1 - y0) * (_H - 2 * _M)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{_M}" y1="{_H - _M}" x2="{_W - _M}" y2="{_H - _M}" stroke="black"/>',
        f'<line x1="{_M}" y1="{_M}" x2="{_M}" y2="{_H - _M}" stroke="black"/>',
        f'<text x="{_M}" y="{_H - 10}" font-size="12">{x0:g}</text>',
        f'<text x="{_W - _M}" y="{_H - 10}" font-size="12">{x1:g}</text>',
        f'<text x="4" y="{_M}" font-size="12">{y1:.3g}</text>',
    ]
    if title:
        out.append(f'<text x="{_W / 2}" y="20" font-size="14" text-anchor="middle">{title}</text>')
    if reference_diagonal:
        hi = min(x1, y1)
        out.append(f'<line x1="{_fmt(px(0))}" y1="{_fmt(py(0))}" x2="{_fmt(px(hi))}" y2="{_fmt(py(hi))}" '
                   'stroke="gray" stroke-dasharray="4 3"/>')
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    for i, (label, xs, ys) in enumerate(series):
        coords = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys) if math.isfinite(y))
        c = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{_W - _M - 120}" y="{_M + 14 * (i + 1)}" font-size="12" fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
