"""Minimal SVG line plots of diagnostic series."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def line_plot(path, t, series: dict, *, log: bool = False, title: str = "", width: int = 640,
              height: int = 400) -> Path:
    """Write polylines of ``series`` (name -> values) against ``t``.

    With ``log=True`` the vertical axis shows ``log10 |y|`` and
    nonpositive samples are dropped.
    """
    t = np.asarray(t, dtype=float)
    ml, mr, mt, mb = 60, 20, 30, 40
    pw, ph = width - ml - mr, height - mt - mb
    curves = {}
    for name, y in series.items():
        y = np.asarray(y, dtype=float)
        if log:
            keep = np.abs(y) > 0
            curves[name] = (t[keep], np.log10(np.abs(y[keep])))
        else:
            keep = np.isfinite(y)
            curves[name] = (t[keep], y[keep])
    ys = [c[1] for c in curves.values() if c[1].size]
    ylo = min((float(y.min()) for y in ys), default=0.0)
    yhi = max((float(y.max()) for y in ys), default=1.0)
    if yhi - ylo < 1e-300:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    tlo, thi = (float(t.min()), float(t.max())) if t.size else (0.0, 1.0)
    if thi <= tlo:
        thi = tlo + 1.0

    def sx(x):
        return ml + (x - tlo) / (thi - tlo) * pw

    def sy(y):
        return mt + (1.0 - (y - ylo) / (yhi - ylo)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    if title:
        out.append(f'<text x="{width / 2}" y="18" text-anchor="middle">{title}</text>')
    for x in _ticks(tlo, thi):
        out.append(f'<text x="{sx(x):.1f}" y="{height - mb + 15}" text-anchor="middle">{x:.3g}</text>')
    for y in _ticks(ylo, yhi):
        label = f"1e{y:.1f}" if log else f"{y:.3g}"
        out.append(f'<text x="{ml - 5}" y="{sy(y) + 4:.1f}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 5}" text-anchor="middle">t</text>')
    for k, (name, (x, y)) in enumerate(curves.items()):
        colour = PALETTE[k % len(PALETTE)]
        if x.size:
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y) if math.isfinite(b))
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{ml + 10}" y="{mt + 15 + 14 * k}" fill="{colour}">{name}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out))
    return path
