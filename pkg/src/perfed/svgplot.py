"""Dependency-free SVG line plots for traces and replicate summaries.

Emits plain-text SVG: one polyline per series on a log-scaled y axis
against the step index, an optional mean +/- std band polygon per series,
tick marks, and a legend.  Coordinates are rounded to three decimals so
regenerated files diff cleanly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError

__all__ = ["Series", "render_svg"]

_PALETTE = ["#1f6fb4", "#d9541e", "#2e8b57", "#8250c4", "#b02446", "#7a6200"]

_W, _H = 760, 480
_ML, _MR, _MT, _MB = 72, 24, 36, 48  # margins


@dataclass
class Series:
    name: str
    t: np.ndarray
    y: np.ndarray
    band: Optional[Tuple[np.ndarray, np.ndarray]] = None  # (lower, upper)


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _log_ticks(lo: float, hi: float) -> List[float]:
    lo_e = math.floor(math.log10(lo))
    hi_e = math.ceil(math.log10(hi))
    step = max(1, (hi_e - lo_e) // 6)
    return [10.0**e for e in range(lo_e, hi_e + 1, step)]


def _lin_ticks(lo: float, hi: float, n: int = 6) -> List[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 5, 10):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(v)
        v += step
    return ticks


def render_svg(
    series: Sequence[Series],
    path,
    title: str = "",
    xlabel: str = "t",
    ylabel: str = "dist_sq",
) -> None:
    """Write a static log-y line chart of the given series to ``path``."""
    series = [s for s in series]
    if not series:
        raise InputError("nothing to plot")
    pos_vals = np.concatenate(
        [s.y[s.y > 0] for s in series]
        + [b[i][b[i] > 0] for s in series if s.band for i, b in [(0, s.band), (1, s.band)]]
    )
    if pos_vals.size == 0:
        raise InputError("no positive values to place on a log axis")
    y_lo, y_hi = float(pos_vals.min()), float(pos_vals.max())
    if y_lo == y_hi:
        y_lo, y_hi = y_lo / 10.0, y_hi * 10.0
    x_lo = min(float(s.t.min()) for s in series)
    x_hi = max(float(s.t.max()) for s in series)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    def sx(t: float) -> float:
        return _ML + (t - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def sy(v: float) -> float:
        v = max(v, y_lo / 10.0)
        frac = (math.log10(v) - math.log10(y_lo)) / (math.log10(y_hi) - math.log10(y_lo))
        return _H - _MB - frac * (_H - _MT - _MB)

    out: List[str] = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="12">'
    )
    out.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    if title:
        out.append(f'<text x="{_W / 2:.0f}" y="20" text-anchor="middle">{title}</text>')

    # axes
    out.append(
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>'
    )
    out.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>')
    for tv in _lin_ticks(x_lo, x_hi):
        x = sx(tv)
        out.append(f'<line x1="{_fmt(x)}" y1="{_H - _MB}" x2="{_fmt(x)}" y2="{_H - _MB + 5}" stroke="black"/>')
        label = f"{tv:g}"
        out.append(f'<text x="{_fmt(x)}" y="{_H - _MB + 18}" text-anchor="middle">{label}</text>')
    for tv in _log_ticks(y_lo, y_hi):
        y = sy(tv)
        out.append(f'<line x1="{_ML - 5}" y1="{_fmt(y)}" x2="{_ML}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{_ML - 8}" y="{_fmt(y + 4)}" text-anchor="end">{tv:.0e}</text>')
    out.append(
        f'<text x="{(_ML + _W - _MR) / 2:.0f}" y="{_H - 10}" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="16" y="{(_MT + _H - _MB) / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2:.0f})">{ylabel}</text>'
    )

    # bands first so lines draw on top
    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        if s.band is not None:
            lower, upper = s.band
            pts = [f"{_fmt(sx(t))},{_fmt(sy(max(v, y_lo / 10)))}" for t, v in zip(s.t, upper)]
            pts += [
                f"{_fmt(sx(t))},{_fmt(sy(max(v, y_lo / 10)))}"
                for t, v in zip(s.t[::-1], lower[::-1])
            ]
            out.append(
                f'<polygon points="{" ".join(pts)}" fill="{color}" opacity="0.15" stroke="none"/>'
            )
    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        keep = s.y > 0
        pts = " ".join(
            f"{_fmt(sx(t))},{_fmt(sy(v))}" for t, v in zip(s.t[keep], s.y[keep])
        )
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')

    # legend, top right
    for i, s in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        ly = _MT + 14 + 16 * i
        out.append(
            f'<line x1="{_W - _MR - 150}" y1="{ly - 4}" x2="{_W - _MR - 126}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(f'<text x="{_W - _MR - 120}" y="{ly}">{s.name}</text>')

    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
