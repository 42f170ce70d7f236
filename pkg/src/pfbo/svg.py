"""Minimal self-contained SVG line plots (median line plus quantile band)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=55)
LOG_FLOOR = 1e-12


@dataclass
class Series:
    label: str
    x: np.ndarray
    median: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float, log: bool) -> str:
    if log:
        return f"1e{int(round(v))}"
    return f"{v:g}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def line_plot(series: list[Series], title: str = "", xlabel: str = "", ylabel: str = "",
              log_y: bool = True) -> str:
    """Render series as one SVG document string."""
    def ty(v):
        v = np.asarray(v, dtype=np.float64)
        return np.log10(np.maximum(v, LOG_FLOOR)) if log_y else v

    xs = np.concatenate([np.asarray(s.x, dtype=np.float64) for s in series]) if series else np.array([0.0, 1.0])
    ys = [ty(s.median) for s in series]
    ys += [ty(s.lower) for s in series if s.lower is not None]
    ys += [ty(s.upper) for s in series if s.upper is not None]
    yall = np.concatenate(ys) if ys else np.array([0.0, 1.0])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(yall.min()), float(yall.max())
    if log_y:
        y0, y1 = math.floor(y0), math.ceil(y1)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return MARGIN["left"] + (np.asarray(v) - x0) / (x1 - x0) * pw

    def py(v):
        return MARGIN["top"] + (1.0 - (np.asarray(v) - y0) / (y1 - y0)) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    yt = np.arange(y0, y1 + 0.5) if log_y else _nice_ticks(y0, y1)
    for v in yt:
        y = float(py(v))
        out.append(f'<line x1="{MARGIN["left"] - 4}" y1="{_fmt(y)}" x2="{MARGIN["left"]}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 7}" y="{_fmt(y + 4)}" text-anchor="end">{_tick_label(v, log_y)}</text>')
    for v in _nice_ticks(x0, x1):
        x = float(px(v))
        yb = MARGIN["top"] + ph
        out.append(f'<line x1="{_fmt(x)}" y1="{yb}" x2="{_fmt(x)}" y2="{yb + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{yb + 17}" text-anchor="middle">{v:g}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    cy = MARGIN["top"] + ph / 2
    out.append(f'<text x="16" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 16 {cy:.1f})">'
               f'{escape(ylabel)}</text>')

    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        x = px(np.asarray(s.x, dtype=np.float64))
        if s.lower is not None and s.upper is not None:
            pts = list(zip(x, py(ty(s.upper)))) + list(zip(x[::-1], py(ty(s.lower))[::-1]))
            poly = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            out.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, py(ty(s.median))))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 12 + 18 * i
        lx = WIDTH - MARGIN["right"] + 10
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 25}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(path, series: list[Series], **kw) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(line_plot(series, **kw))
