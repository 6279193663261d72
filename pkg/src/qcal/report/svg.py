"""Minimal deterministic SVG line/scatter plots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from html import escape
from typing import Sequence

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 72, 20, 36, 52


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    kind: str = "points"  # points | line
    color: str | None = None


@dataclass
class Figure:
    title: str
    xlabel: str
    ylabel: str
    series: list[Series] = field(default_factory=list)
    xscale: float = 1.0
    note: str = ""

    def add(self, *args, **kwargs) -> Series:
        s = Series(*args, **kwargs)
        self.series.append(s)
        return s


def nice_ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(0.0 if abs(t) < step * 1e-9 else t)
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.6g}"


def render(fig: Figure) -> str:
    xs = [np.asarray(s.x, dtype=float) * fig.xscale for s in fig.series]
    ys = [np.asarray(s.y, dtype=float) for s in fig.series]
    allx = np.concatenate(xs) if xs else np.array([])
    ally = np.concatenate(ys) if ys else np.array([])
    finite = np.isfinite(allx) & np.isfinite(ally)
    if finite.any():
        x0, x1 = float(allx[finite].min()), float(allx[finite].max())
        y0, y1 = float(ally[finite].min()), float(ally[finite].max())
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def px(v):
        return MARGIN_L + (v - x0) / (x1 - x0) * pw

    def py(v):
        return MARGIN_T + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(fig.title)}</text>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for t in nice_ticks(x0, x1):
        X = px(t)
        out.append(f'<line x1="{_fmt(X)}" y1="{MARGIN_T + ph}" x2="{_fmt(X)}" y2="{MARGIN_T + ph + 5}" stroke="#333"/>')
        out.append(f'<text x="{_fmt(X)}" y="{MARGIN_T + ph + 18}" text-anchor="middle">{_label(t)}</text>')
    for t in nice_ticks(y0, y1):
        Y = py(t)
        out.append(f'<line x1="{MARGIN_L - 5}" y1="{_fmt(Y)}" x2="{MARGIN_L}" y2="{_fmt(Y)}" stroke="#333"/>')
        out.append(f'<text x="{MARGIN_L - 8}" y="{_fmt(Y + 4)}" text-anchor="end">{_label(t)}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(fig.xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN_T + ph / 2:.0f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN_T + ph / 2:.0f})">{escape(fig.ylabel)}</text>')

    for k, (s, x, y) in enumerate(zip(fig.series, xs, ys)):
        color = s.color or PALETTE[k % len(PALETTE)]
        ok = np.isfinite(x) & np.isfinite(y)
        if s.kind == "line":
            pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(x[ok], y[ok]))
            out.append(f'<polyline class="curve" fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        else:
            out.append(f'<g class="points" fill="{color}" fill-opacity="0.7">')
            out.extend(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="2.5"/>' for a, b in zip(x[ok], y[ok]))
            out.append("</g>")
        ly = MARGIN_T + 14 + 14 * k
        out.append(f'<rect x="{MARGIN_L + pw - 150}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{MARGIN_L + pw - 136}" y="{ly + 1}">{escape(s.label)}</text>')
    if fig.note:
        out.append(f'<text x="{MARGIN_L + 6}" y="{MARGIN_T + 14}" fill="#555">{escape(fig.note)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
