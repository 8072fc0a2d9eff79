"""Static SVG rendering of pointwise bands, written by hand (no plotting dependency).

Output is a pure function of the input: coordinates are printed with a fixed
number of decimals and elements are emitted in a fixed order, so identical
bands give identical bytes.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .data import ConfidenceBand
from .errors import GridMismatch, IoFailure, ValidationError

PANEL_W = 360
PANEL_H = 240
MARGIN = (48, 16, 40, 28)  # left, right, bottom, top
MAX_COLUMNS = 3


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if not hi > lo:
        lo, hi = lo - 0.5, hi + 0.5
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step - 1e-9)
    ticks = []
    t = first
    while t * step <= hi + 1e-9 * step:
        ticks.append(round(t * step, 12) + 0.0)
        t += 1
    return ticks


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.6g}"


def _segments(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index runs where ``mask`` is True."""
    out, start = [], None
    for i, ok in enumerate(mask):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            out.append((start, i))
            start = None
    if start is not None:
        out.append((start, len(mask)))
    return out


def _panel(band: ConfidenceBand, title: str, x0: float, y0: float, xlabel: str, ylabel: str, clip=None) -> list[str]:
    left, right, bottom, top = MARGIN
    pw, ph = PANEL_W - left - right, PANEL_H - top - bottom
    ax, ay = x0 + left, y0 + top
    z = band.grid.points
    est, lo, hi = band.estimate, band.lower, band.upper
    if clip is not None:
        # display only; NaN gaps stay NaN
        est, lo, hi = (np.clip(a, clip[0], clip[1]) for a in (est, lo, hi))
    finite = np.concatenate([a[np.isfinite(a)] for a in (est, lo, hi)])
    ymin, ymax = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if ymax - ymin <= 1e-12 * max(1.0, abs(ymax)):
        pad = 0.5 * max(abs(ymax), 1.0)
        ymin, ymax = ymin - pad, ymax + pad
    xmin, xmax = float(z[0]), float(z[-1]) if z.size > 1 else float(z[0]) + 1.0
    yt = nice_ticks(ymin, ymax)
    ymin, ymax = min(ymin, yt[0]), max(ymax, yt[-1])

    def sx(v):
        return ax + (v - xmin) / (xmax - xmin) * pw

    def sy(v):
        return ay + ph - (v - ymin) / (ymax - ymin) * ph

    els = [f'<g class="panel">', f'<text x="{_fmt(ax + pw / 2)}" y="{_fmt(y0 + 16)}" text-anchor="middle">{escape(title)}</text>']
    # band: one polygon per contiguous run of finite bounds
    ok = np.isfinite(lo) & np.isfinite(hi)
    for a, b in _segments(ok):
        upper = [f"{_fmt(sx(z[i]))},{_fmt(sy(hi[i]))}" for i in range(a, b)]
        lower = [f"{_fmt(sx(z[i]))},{_fmt(sy(lo[i]))}" for i in range(b - 1, a - 1, -1)]
        els.append(f'<polygon class="band" points="{" ".join(upper + lower)}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>')
    # estimate: one path, a fresh moveto after each gap
    d = []
    for a, b in _segments(np.isfinite(est)):
        d.append("M" + " L".join(f"{_fmt(sx(z[i]))},{_fmt(sy(est[i]))}" for i in range(a, b)))
    els.append(f'<path class="estimate" d="{" ".join(d)}" fill="none" stroke="#08519c" stroke-width="1.5"/>')
    # axes, ticks and labels
    els.append(f'<rect x="{_fmt(ax)}" y="{_fmt(ay)}" width="{_fmt(pw)}" height="{_fmt(ph)}" fill="none" stroke="#000"/>')
    for t in yt:
        y = sy(t)
        els.append(f'<line x1="{_fmt(ax - 4)}" y1="{_fmt(y)}" x2="{_fmt(ax)}" y2="{_fmt(y)}" stroke="#000"/>')
        els.append(f'<text x="{_fmt(ax - 6)}" y="{_fmt(y + 3)}" text-anchor="end" font-size="9">{_tick_label(t)}</text>')
    for t in nice_ticks(xmin, xmax):
        if t < xmin or t > xmax:
            continue
        x = sx(t)
        els.append(f'<line x1="{_fmt(x)}" y1="{_fmt(ay + ph)}" x2="{_fmt(x)}" y2="{_fmt(ay + ph + 4)}" stroke="#000"/>')
        els.append(f'<text x="{_fmt(x)}" y="{_fmt(ay + ph + 14)}" text-anchor="middle" font-size="9">{_tick_label(t)}</text>')
    els.append(f'<text x="{_fmt(ax + pw / 2)}" y="{_fmt(y0 + PANEL_H - 6)}" text-anchor="middle">{escape(xlabel)}</text>')
    cy = ay + ph / 2
    els.append(f'<text x="{_fmt(x0 + 12)}" y="{_fmt(cy)}" text-anchor="middle" transform="rotate(-90 {_fmt(x0 + 12)} {_fmt(cy)})">{escape(ylabel)}</text>')
    els.append("</g>")
    return els


def band_svg(
    panels: list[tuple[str, ConfidenceBand]],
    xlabel: str = "temperature",
    ylabel: str = "correlation",
    clip: tuple[float, float] | None = None,
) -> str:
    """SVG text with one panel per (title, 1-d band).

    ``clip`` limits the drawn curves, e.g. (-1, 1) for correlations; the band
    objects themselves are not modified.
    """
    if clip is not None and not clip[0] < clip[1]:
        raise ValidationError("clip must be (low, high) with low < high")
    if not panels:
        raise ValidationError("nothing to plot")
    grid = panels[0][1].grid
    for title, band in panels:
        if band.estimate.ndim != 1:
            raise ValidationError(f"panel {title!r}: expected a 1-d band, use ConfidenceBand.pair()")
        if not band.grid.same_as(grid):
            raise GridMismatch("all plotted bands must share one grid")
    cols = min(MAX_COLUMNS, len(panels))
    rows = -(-len(panels) // cols)
    width, height = cols * PANEL_W, rows * PANEL_H
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="#fff"/>',
    ]
    for i, (title, band) in enumerate(panels):
        out += _panel(band, title, (i % cols) * PANEL_W, (i // cols) * PANEL_H, xlabel, ylabel, clip)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_band_plot(
    band: ConfidenceBand,
    path,
    pairs: list[tuple[int, int]] | None = None,
    names: tuple[str, ...] | None = None,
    xlabel: str = "temperature",
    ylabel: str | None = None,
    clip: tuple[float, float] | None = None,
) -> Path:
    """Write an SVG with one panel per selected (k, l) pair (0-based).

    ``band`` may be a matrix band (pairs default to every k < l, or (0, 0)
    when p = 1) or a single 1-d band.  ``clip`` limits what is drawn
    (see :func:`band_svg`).
    """
    ylabel = ylabel or band.kind
    if band.estimate.ndim == 1:
        panels = [(ylabel, band)]
    else:
        p = band.estimate.shape[1]
        if pairs is None:
            pairs = [(k, l) for k in range(p) for l in range(k + 1, p)] or [(0, 0)]
        names = names or tuple(f"y{k + 1}" for k in range(p))
        panels = [(f"{names[k]} / {names[l]}", band.pair(k, l)) for k, l in pairs]
    text = band_svg(panels, xlabel, ylabel, clip)
    path = Path(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path
