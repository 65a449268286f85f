"""Tiny self-contained SVG line charts."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
W, H = 640, 400
ML, MR, MT, MB = 64, 180, 36, 48


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray


@dataclass
class LineChart:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)
    vline: float | None = None  # dashed vertical marker
    ylim: tuple | None = None  # clip range; None spans the data

    def add(self, label: str, x, y) -> "LineChart":
        self.series.append(Series(label, np.asarray(x, float), np.asarray(y, float)))
        return self


def _num(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi == lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def render(chart: LineChart) -> str:
    xs = [s.x for s in chart.series if s.x.size]
    ys = [s.y[np.isfinite(s.y)] for s in chart.series]
    ys = [y for y in ys if y.size]
    x0, x1 = (min(float(x.min()) for x in xs), max(float(x.max()) for x in xs)) if xs else (0.0, 1.0)
    if chart.ylim is not None:
        y0, y1 = chart.ylim
    elif ys:
        y0, y1 = min(float(y.min()) for y in ys), max(float(y.max()) for y in ys)
    else:
        y0, y1 = 0.0, 1.0
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pw, ph = W - ML - MR, H - MT - MB

    def px(x):
        return ML + (x - x0) / (x1 - x0) * pw

    def py(y):
        return MT + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(chart.title)}</text>',
        f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{MT + ph}" x2="{px(t):.2f}" y2="{MT + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(t):.2f}" y="{MT + ph + 16}" text-anchor="middle">{_num(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ML - 4}" y1="{py(t):.2f}" x2="{ML}" y2="{py(t):.2f}" stroke="black"/>')
        out.append(f'<text x="{ML - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{_num(t)}</text>')
    out.append(f'<text x="{ML + pw / 2:.1f}" y="{H - 10}" text-anchor="middle">{escape(chart.xlabel)}</text>')
    out.append(
        f'<text x="16" y="{MT + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {MT + ph / 2:.1f})">{escape(chart.ylabel)}</text>'
    )
    if chart.vline is not None and x0 <= chart.vline <= x1:
        out.append(
            f'<line x1="{px(chart.vline):.2f}" y1="{MT}" x2="{px(chart.vline):.2f}" y2="{MT + ph}" stroke="gray" stroke-dasharray="5,4"/>'
        )
    for i, s in enumerate(chart.series):
        color = PALETTE[i % len(PALETTE)]
        y = np.clip(s.y, y0, y1)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(s.x, y) if np.isfinite(b))
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MT + 14 * i + 8
        out.append(f'<line x1="{W - MR + 10}" y1="{ly}" x2="{W - MR + 28}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - MR + 32}" y="{ly + 4}">{escape(s.label[:26])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(chart: LineChart, path) -> Path:
    path = Path(path)
    path.write_text(render(chart))
    return path


def tac_chart(times, curves: Sequence[tuple[str, np.ndarray]], pa_time: float | None, title="Time-attenuation curves") -> LineChart:
    c = LineChart(title, "time (s)", "HU", vline=pa_time)
    for name, y in curves:
        c.add(name, times, y)
    return c


def drift_chart(scans, names, percent, clip: float = 30.0) -> LineChart:
    c = LineChart("Feature change vs P1", "scan", "% change", ylim=(-clip, clip))
    for n, row in zip(names, percent):
        c.add(n, scans, np.clip(row, -clip, clip))
    return c
