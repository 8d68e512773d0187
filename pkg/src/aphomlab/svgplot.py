"""Minimal deterministic SVG line plots.

Diagnostic plots only: fixed palette, fixed float formatting, no
timestamps or randomness, so a rerun produces byte-identical files.
"""

from __future__ import annotations

import math
import os

__all__ = ["line_plot"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 72, 20, 34, 56


def _fmt(x):
    return f"{x:.6g}"


def _nice_ticks(lo, hi, n=5):
    """Round tick positions covering [lo, hi] (linear axis)."""
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / max(n, 1)))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= n:
            step *= mult
            break
    t0 = math.ceil(lo / step) * step
    ticks = []
    t = t0
    while t <= hi + 1e-12 * span:
        ticks.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return ticks


def _log_ticks(lo, hi):
    e0 = math.floor(math.log10(lo))
    e1 = math.ceil(math.log10(hi))
    return [10.0 ** e for e in range(e0, e1 + 1)]


def _esc(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


class _Axis:
    def __init__(self, lo, hi, log, pix0, pix1):
        if log:
            lo = max(lo, 1e-300)
            hi = max(hi, lo * 1.0000001)
        if hi <= lo:
            hi = lo + (abs(lo) + 1.0) * 1e-3
        pad = 0.0 if log else 0.05 * (hi - lo)
        self.lo = lo / (10 ** 0.08) if log else lo - pad
        self.hi = hi * (10 ** 0.08) if log else hi + pad
        self.log = log
        self.p0, self.p1 = pix0, pix1

    def to_pix(self, v):
        if self.log:
            v = max(v, 1e-300)
            f = (math.log10(v) - math.log10(self.lo)) / (
                math.log10(self.hi) - math.log10(self.lo))
        else:
            f = (v - self.lo) / (self.hi - self.lo)
        return self.p0 + f * (self.p1 - self.p0)

    def ticks(self):
        if self.log:
            return [t for t in _log_ticks(self.lo, self.hi)
                    if self.lo <= t <= self.hi]
        return _nice_ticks(self.lo, self.hi)


def line_plot(path, series, xlabel, ylabel, title="", logx=False, logy=False):
    """Write a standalone SVG line plot.

    Parameters
    ----------
    path : str
        Output file, written atomically (temp + rename).
    series : sequence of (label, xs, ys)
        One polyline per entry; points with nonpositive values are
        dropped on log axes.
    xlabel, ylabel : str
        Axis captions (always rendered; the contract is labeled axes).
    """
    pts_all = []
    clean = []
    for label, xs, ys in series:
        pair = [(float(x), float(y)) for x, y in zip(xs, ys)
                if not (math.isnan(x) or math.isnan(y) or math.isinf(x) or math.isinf(y))
                and not (logx and x <= 0) and not (logy and y <= 0)]
        clean.append((str(label), pair))
        pts_all.extend(pair)
    if not pts_all:
        pts_all = [(1.0, 1.0)]

    ax = _Axis(min(p[0] for p in pts_all), max(p[0] for p in pts_all),
               logx, _ML, _W - _MR)
    ay = _Axis(min(p[1] for p in pts_all), max(p[1] for p in pts_all),
               logy, _H - _MB, _MT)

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" '
               f'height="{_H}" viewBox="0 0 {_W} {_H}">')
    out.append(f'<rect width="{_W}" height="{_H}" fill="white"/>')
    out.append('<g font-family="Helvetica,Arial,sans-serif" font-size="12">')
    if title:
        out.append(f'<text x="{_W // 2}" y="20" text-anchor="middle" '
                   f'font-size="14">{_esc(title)}</text>')

    # frame and grid
    out.append(f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
               f'height="{_H - _MT - _MB}" fill="none" stroke="#333"/>')
    for t in ax.ticks():
        px = ax.to_pix(t)
        out.append(f'<line x1="{_fmt(px)}" y1="{_MT}" x2="{_fmt(px)}" '
                   f'y2="{_H - _MB}" stroke="#ddd"/>')
        out.append(f'<text x="{_fmt(px)}" y="{_H - _MB + 16}" '
                   f'text-anchor="middle">{_fmt(t)}</text>')
    for t in ay.ticks():
        py = ay.to_pix(t)
        out.append(f'<line x1="{_ML}" y1="{_fmt(py)}" x2="{_W - _MR}" '
                   f'y2="{_fmt(py)}" stroke="#ddd"/>')
        out.append(f'<text x="{_ML - 6}" y="{_fmt(py + 4)}" '
                   f'text-anchor="end">{_fmt(t)}</text>')

    # axis captions
    out.append(f'<text x="{(_ML + _W - _MR) // 2}" y="{_H - 14}" '
               f'text-anchor="middle">{_esc(xlabel)}</text>')
    ymid = (_MT + _H - _MB) // 2
    out.append(f'<text x="16" y="{ymid}" text-anchor="middle" '
               f'transform="rotate(-90 16 {ymid})">{_esc(ylabel)}</text>')

    # data
    for i, (label, pair) in enumerate(clean):
        color = _PALETTE[i % len(_PALETTE)]
        if pair:
            path_d = " ".join(f"{_fmt(ax.to_pix(x))},{_fmt(ay.to_pix(y))}"
                              for x, y in pair)
            out.append(f'<polyline points="{path_d}" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')
            for x, y in pair:
                out.append(f'<circle cx="{_fmt(ax.to_pix(x))}" '
                           f'cy="{_fmt(ay.to_pix(y))}" r="2.5" fill="{color}"/>')
        ly = _MT + 16 + 16 * i
        out.append(f'<line x1="{_W - _MR - 150}" y1="{ly - 4}" '
                   f'x2="{_W - _MR - 126}" y2="{ly - 4}" stroke="{color}" '
                   f'stroke-width="1.5"/>')
        out.append(f'<text x="{_W - _MR - 120}" y="{ly}">{_esc(label)}</text>')

    out.append("</g></svg>\n")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out))
    os.replace(tmp, path)
    return path
