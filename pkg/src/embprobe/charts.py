"""Static SVG charts, hand-emitted for byte-stable output.

No timestamps, no random ids: rerunning with identical inputs rewrites
identical bytes.
"""
from __future__ import annotations

import math

import numpy as np

from .fileio import atomic_write_text

PALETTE = ("#4472c4", "#ed7d31", "#70ad47", "#ffc000", "#7030a0", "#c00000")
WIDTH = 640
HEIGHT = 400
MARGIN = {"left": 64, "right": 24, "top": 44, "bottom": 56}


def _f(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + step * 1e-9:
        if t >= lo - step * 1e-9:
            ticks.append(round(t, 10))
        t += step
    return ticks


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" font-size="15" text-anchor="middle">{title}</text>',
    ]
    if xlabel:
        parts.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" font-size="12" '
                     f'text-anchor="middle">{xlabel}</text>')
    if ylabel:
        cy = (MARGIN["top"] + HEIGHT - MARGIN["bottom"]) / 2
        parts.append(f'<text x="16" y="{cy:.0f}" font-size="12" text-anchor="middle" '
                     f'transform="rotate(-90 16 {cy:.0f})">{ylabel}</text>')
    return parts


def _axes(parts: list[str], x0: float, x1: float, y0: float, y1: float) -> None:
    parts.append(f'<line x1="{_f(x0)}" y1="{_f(y1)}" x2="{_f(x1)}" y2="{_f(y1)}" '
                 f'stroke="#333333" stroke-width="1"/>')
    parts.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x0)}" y2="{_f(y1)}" '
                 f'stroke="#333333" stroke-width="1"/>')


def bar_chart(path, title: str, group_labels, series_labels, values,
              err_low=None, err_high=None, ylabel: str = "") -> None:
    """Grouped bars: values[series][group], optional error bars per bar."""
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    n_groups = len(group_labels)
    n_series = len(series_labels)
    flat = [v for row in values for v in row]
    if err_high is not None:
        flat += [v for row in err_high for v in row if v is not None]
    vmax = max(flat + [0.0])
    ticks = _nice_ticks(0.0, vmax if vmax > 0 else 1.0)
    top = ticks[-1]

    def sy(v: float) -> float:
        return y1 - (v / top) * (y1 - y0) if top > 0 else y1

    parts = _frame(title, "", ylabel)
    _axes(parts, x0, x1, y0, y1)
    for t in ticks:
        y = sy(t)
        parts.append(f'<line x1="{_f(x0 - 4)}" y1="{_f(y)}" x2="{_f(x0)}" y2="{_f(y)}" '
                     f'stroke="#333333"/>')
        parts.append(f'<text x="{_f(x0 - 8)}" y="{_f(y + 4)}" font-size="11" '
                     f'text-anchor="end">{t:g}</text>')
    slot = (x1 - x0) / max(n_groups, 1)
    bar_w = slot * 0.7 / max(n_series, 1)
    for gi, glabel in enumerate(group_labels):
        gx = x0 + slot * gi + slot * 0.15
        for si in range(n_series):
            v = values[si][gi]
            bx = gx + si * bar_w
            parts.append(f'<rect x="{_f(bx)}" y="{_f(sy(v))}" width="{_f(bar_w * 0.9)}" '
                         f'height="{_f(y1 - sy(v))}" fill="{PALETTE[si % len(PALETTE)]}"/>')
            if err_low is not None and err_high is not None \
                    and err_low[si][gi] is not None and err_high[si][gi] is not None:
                cx = bx + bar_w * 0.45
                lo_y, hi_y = sy(err_low[si][gi]), sy(err_high[si][gi])
                parts.append(f'<line x1="{_f(cx)}" y1="{_f(lo_y)}" x2="{_f(cx)}" '
                             f'y2="{_f(hi_y)}" stroke="#000000" stroke-width="1"/>')
                for ey in (lo_y, hi_y):
                    parts.append(f'<line x1="{_f(cx - 3)}" y1="{_f(ey)}" x2="{_f(cx + 3)}" '
                                 f'y2="{_f(ey)}" stroke="#000000" stroke-width="1"/>')
        parts.append(f'<text x="{_f(gx + slot * 0.35)}" y="{_f(y1 + 16)}" font-size="11" '
                     f'text-anchor="middle">{glabel}</text>')
    for si, slabel in enumerate(series_labels):
        lx = x1 - 110
        ly = y0 + 16 * si
        parts.append(f'<rect x="{_f(lx)}" y="{_f(ly)}" width="10" height="10" '
                     f'fill="{PALETTE[si % len(PALETTE)]}"/>')
        parts.append(f'<text x="{_f(lx + 14)}" y="{_f(ly + 9)}" font-size="11">{slabel}</text>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")


def line_chart(path, title: str, xs, ys, xlabel: str = "", ylabel: str = "") -> None:
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    xmin, xmax = min(xs), max(xs)
    if xmax == xmin:
        xmax = xmin + 1.0
    yticks = _nice_ticks(min(ys + [0.0]), max(ys + [0.0]))
    ylo, yhi = yticks[0], yticks[-1]
    if yhi == ylo:
        yhi = ylo + 1.0

    def sx(v: float) -> float:
        return x0 + (v - xmin) / (xmax - xmin) * (x1 - x0)

    def sy(v: float) -> float:
        return y1 - (v - ylo) / (yhi - ylo) * (y1 - y0)

    parts = _frame(title, xlabel, ylabel)
    _axes(parts, x0, x1, y0, y1)
    for t in yticks:
        parts.append(f'<line x1="{_f(x0 - 4)}" y1="{_f(sy(t))}" x2="{_f(x0)}" '
                     f'y2="{_f(sy(t))}" stroke="#333333"/>')
        parts.append(f'<text x="{_f(x0 - 8)}" y="{_f(sy(t) + 4)}" font-size="11" '
                     f'text-anchor="end">{t:g}</text>')
    for v in xs:
        parts.append(f'<line x1="{_f(sx(v))}" y1="{_f(y1)}" x2="{_f(sx(v))}" '
                     f'y2="{_f(y1 + 4)}" stroke="#333333"/>')
        parts.append(f'<text x="{_f(sx(v))}" y="{_f(y1 + 18)}" font-size="11" '
                     f'text-anchor="middle">{v:g}</text>')
    points = " ".join(f"{_f(sx(x))},{_f(sy(y))}" for x, y in zip(xs, ys))
    parts.append(f'<polyline points="{points}" fill="none" stroke="{PALETTE[0]}" '
                 f'stroke-width="2"/>')
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{_f(sx(x))}" cy="{_f(sy(y))}" r="3" fill="{PALETTE[0]}"/>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")


def histogram_overlay(path, title: str, groups: dict, bins: int = 50,
                      xlabel: str = "") -> None:
    """Overlaid normalized histograms, one translucent series per group."""
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    all_vals = np.concatenate([np.asarray(v, dtype=np.float64) for v in groups.values()])
    lo, hi = float(all_vals.min()), float(all_vals.max())
    if lo == hi:
        hi = lo + 1.0
    hists = {}
    for name, vals in groups.items():
        counts, _ = np.histogram(np.asarray(vals, dtype=np.float64), bins=bins, range=(lo, hi))
        hists[name] = counts / max(1, len(vals))
    peak = max(float(h.max()) for h in hists.values()) or 1.0
    bin_w = (x1 - x0) / bins

    parts = _frame(title, xlabel, "proportion")
    _axes(parts, x0, x1, y0, y1)
    for i, (name, h) in enumerate(sorted(hists.items())):
        color = PALETTE[i % len(PALETTE)]
        for b, v in enumerate(h):
            if v <= 0:
                continue
            bh = (v / peak) * (y1 - y0)
            parts.append(f'<rect x="{_f(x0 + b * bin_w)}" y="{_f(y1 - bh)}" '
                         f'width="{_f(bin_w)}" height="{_f(bh)}" fill="{color}" '
                         f'fill-opacity="0.5"/>')
        parts.append(f'<rect x="{_f(x1 - 110)}" y="{_f(y0 + 16 * i)}" width="10" height="10" '
                     f'fill="{color}" fill-opacity="0.5"/>')
        parts.append(f'<text x="{_f(x1 - 96)}" y="{_f(y0 + 16 * i + 9)}" '
                     f'font-size="11">{name}</text>')
    for v, anchor in ((lo, "start"), (hi, "end")):
        x = x0 if anchor == "start" else x1
        parts.append(f'<text x="{_f(x)}" y="{_f(y1 + 16)}" font-size="11" '
                     f'text-anchor="{anchor}">{v:.3g}</text>')
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")
