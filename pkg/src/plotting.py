"""
Standalone SVG plots of estimated curves with shaded confidence bands.
"""

from __future__ import annotations

import logging
from html import escape
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .paths import FunctionalCurve

logger = logging.getLogger(__name__)

MAX_POINTS = 512
WIDTH, HEIGHT = 720, 440
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 170, 40, 50

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def downsample_indices(n: int, limit: int = MAX_POINTS) -> np.ndarray:
    """At most ``limit`` evenly spread indices, always keeping both ends."""
    if n <= limit:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, limit)).astype(int))


def _points(xs: Sequence[float], ys: Sequence[float]) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))


def render_svg(curves: List[FunctionalCurve], title: str, ylabel: str = "estimate") -> str:
    """One polyline per curve over a shaded 95% band."""
    if not curves:
        raise ValueError("nothing to plot")

    t_all = np.concatenate([c.times for c in curves])
    lo_all = np.concatenate([[e.ci95[0] for e in c.estimates] for c in curves])
    hi_all = np.concatenate([[e.ci95[1] for e in c.estimates] for c in curves])
    t_min, t_max = float(t_all.min()), float(t_all.max())
    y_min, y_max = float(lo_all.min()), float(hi_all.max())
    if t_max == t_min:
        t_max = t_min + 1.0
    if y_max == y_min:
        y_max, y_min = y_max + 0.5, y_min - 0.5

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def sx(t):
        return MARGIN_LEFT + (np.asarray(t) - t_min) / (t_max - t_min) * plot_w

    def sy(y):
        return MARGIN_TOP + (1.0 - (np.asarray(y) - y_min) / (y_max - y_min)) * plot_h

    layers = []
    legend = []
    for k, curve in enumerate(curves):
        color = PALETTE[k % len(PALETTE)]
        idx = downsample_indices(len(curve.times))
        t = curve.times[idx]
        est = [curve.estimates[i] for i in idx]
        mid = [e.value for e in est]
        lo = [e.ci95[0] for e in est]
        hi = [e.ci95[1] for e in est]

        band = _points(sx(t), sy(hi)) + " " + _points(sx(t[::-1]), sy(lo[::-1]))
        layers.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
        layers.append(
            f'<polyline points="{_points(sx(t), sy(mid))}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        y = MARGIN_TOP + 14 + 18 * k
        x = WIDTH - MARGIN_RIGHT + 12
        legend.append(
            f'<line x1="{x}" y1="{y - 4}" x2="{x + 18}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>'
            f'<text x="{x + 24}" y="{y}" font-size="12">{escape(curve.model_label)}</text>'
        )

    ticks = []
    for frac in np.linspace(0.0, 1.0, 5):
        tv = t_min + frac * (t_max - t_min)
        yv = y_min + frac * (y_max - y_min)
        ticks.append(
            f'<text x="{float(sx(tv)):.2f}" y="{HEIGHT - MARGIN_BOTTOM + 18}" font-size="11" '
            f'text-anchor="middle">{tv:.3g}</text>'
        )
        ticks.append(
            f'<text x="{MARGIN_LEFT - 8}" y="{float(sy(yv)) + 4:.2f}" font-size="11" '
            f'text-anchor="end">{yv:.4g}</text>'
        )

    body = "\n  ".join(layers + legend + ticks)
    return f"""<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">
  <rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
  <text x="{MARGIN_LEFT}" y="{MARGIN_TOP - 14}" font-size="14">{escape(title)}</text>
  <rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>
  <text x="{MARGIN_LEFT + plot_w / 2:.1f}" y="{HEIGHT - 10}" font-size="12" text-anchor="middle">t</text>
  <text x="16" y="{MARGIN_TOP + plot_h / 2:.1f}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {MARGIN_TOP + plot_h / 2:.1f})">{escape(ylabel)}</text>
  {body}
</svg>
"""


def write_svg(path: Path, curves: List[FunctionalCurve], title: str, ylabel: str = "estimate") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(curves, title, ylabel))
    logger.info(f"Wrote plot {path}")
    return path
