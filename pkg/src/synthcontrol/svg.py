"""Minimal deterministic SVG line charts (fixed 800x500 canvas)."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from xml.sax.saxutils import escape

__all__ = ["Line", "line_chart", "nice_ticks"]

WIDTH, HEIGHT = 800, 500
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50


@dataclass(frozen=True)
class Line:
    xs: Sequence[float]
    ys: Sequence[float]
    color: str = "#1f4e79"
    width: float = 2.0
    dash: str | None = None
    opacity: float = 1.0
    label: str | None = None


def nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    """Round tick positions covering ``[lo, hi]`` with steps of 1, 2 or 5 x 10^k."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0]
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    raw = (hi - lo) / max(target - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 5.0, 10.0) if m * mag >= raw)
    start = math.floor(lo / step + 1e-9) * step
    ticks = []
    t = start
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 10))
        t += step
    if ticks[-1] < hi:
        ticks.append(round(ticks[-1] + step, 10))
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return f"{v:g}"


def line_chart(
    lines: Sequence[Line],
    title: str = "",
    x_label: str = "",
    y_label: str = "",
    vline: float | None = None,
    hline: float | None = None,
) -> str:
    xs = [x for ln in lines for x in ln.xs]
    ys = [y for ln in lines for y in ln.ys if math.isfinite(y)]
    if hline is not None:
        ys.append(hline)
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 1, x_hi + 1
    y_ticks = nice_ticks(min(ys), max(ys)) if ys else [0.0, 1.0]
    y_lo, y_hi = y_ticks[0], y_ticks[-1]
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(x):
        return LEFT + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return TOP + (y_hi - y) / (y_hi - y_lo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>')
    # axes and ticks
    out.append(f'<g stroke="#999999" stroke-width="1">')
    out.append(f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}"/>')
    out.append(f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}"/>')
    out.append("</g>")
    x_ticks = sorted({x for x in xs})
    if len(x_ticks) > 15:
        x_ticks = nice_ticks(x_lo, x_hi)
        x_ticks = [t for t in x_ticks if x_lo <= t <= x_hi]
    for t in x_ticks:
        out.append(f'<line x1="{_fmt(px(t))}" y1="{TOP + ph}" x2="{_fmt(px(t))}" y2="{TOP + ph + 5}" stroke="#999999"/>')
        out.append(f'<text x="{_fmt(px(t))}" y="{TOP + ph + 20}" text-anchor="middle">{_tick_label(t)}</text>')
    for t in y_ticks:
        out.append(f'<line x1="{LEFT - 5}" y1="{_fmt(py(t))}" x2="{LEFT + pw}" y2="{_fmt(py(t))}" stroke="#eeeeee"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_fmt(py(t) + 4)}" text-anchor="end">{_tick_label(t)}</text>')
    if x_label:
        out.append(f'<text x="{LEFT + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(x_label)}</text>')
    if y_label:
        out.append(f'<text x="16" y="{TOP + ph / 2:.2f}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {TOP + ph / 2:.2f})">{escape(y_label)}</text>')
    if hline is not None:
        out.append(f'<line x1="{LEFT}" y1="{_fmt(py(hline))}" x2="{LEFT + pw}" y2="{_fmt(py(hline))}" '
                   'stroke="#555555" stroke-width="1"/>')
    if vline is not None:
        out.append(f'<line x1="{_fmt(px(vline))}" y1="{TOP}" x2="{_fmt(px(vline))}" y2="{TOP + ph}" '
                   'stroke="#555555" stroke-width="1" stroke-dasharray="6 4"/>')
    for ln in lines:
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(ln.xs, ln.ys) if math.isfinite(y))
        attrs = f'fill="none" stroke="{ln.color}" stroke-width="{ln.width:g}"'
        if ln.dash:
            attrs += f' stroke-dasharray="{ln.dash}"'
        if ln.opacity < 1.0:
            attrs += f' stroke-opacity="{ln.opacity:g}"'
        label = f"<title>{escape(ln.label)}</title>" if ln.label else ""
        out.append(f'<polyline {attrs} points="{pts}">{label}</polyline>')
    legend = [ln for ln in lines if ln.label and ln.opacity >= 1.0]
    for i, ln in enumerate(legend[:4]):
        y = TOP + 12 + 18 * i
        dash = f' stroke-dasharray="{ln.dash}"' if ln.dash else ""
        out.append(f'<line x1="{LEFT + pw - 170}" y1="{y}" x2="{LEFT + pw - 140}" y2="{y}" '
                   f'stroke="{ln.color}" stroke-width="{ln.width:g}"{dash}/>')
        out.append(f'<text x="{LEFT + pw - 132}" y="{y + 4}">{escape(ln.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
