"""Static SVG line plots with optional spread bands. No plotting dependency."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 170, "top": 40, "bottom": 55}


@dataclass
class Series:
    label: str
    x: list
    y: list
    lo: list | None = None
    hi: list | None = None


def _ok(v) -> bool:
    return v is not None and math.isfinite(v)


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _num(v: float) -> str:
    return f"{v:.2f}"


def _label(v) -> str:
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:g}" if isinstance(v, float) else str(v)


def line_plot(series: list, title: str, xlabel: str, ylabel: str) -> str:
    """Render series as an SVG string.

    Non-finite or non-numeric x values (such as an infinite threshold) switch
    the x axis to evenly spaced categories in first-seen order. Points with a
    missing y break the line.
    """
    xs_all = [x for s in series for x in s.x]
    categorical = any(not isinstance(x, (int, float)) or not math.isfinite(x) for x in xs_all)
    cats = list(dict.fromkeys(xs_all)) if categorical else []
    ys = [v for s in series for arr in (s.y, s.lo or [], s.hi or []) for v in arr if _ok(v)]
    ylo, yhi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if ylo == yhi:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    if categorical:
        xlo, xhi = 0.0, max(len(cats) - 1, 1)
    else:
        xlo, xhi = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
        if xlo == xhi:
            xlo, xhi = xlo - 0.5, xhi + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x) -> float:
        v = cats.index(x) if categorical else x
        return MARGIN["left"] + (v - xlo) / (xhi - xlo) * pw

    def py(y) -> float:
        return MARGIN["top"] + (yhi - y) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2 - MARGIN["right"] / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    x0, y0 = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<rect x="{x0}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(ylo + pad, yhi - pad):
        y = py(t)
        out.append(f'<line x1="{x0 - 4}" y1="{_num(y)}" x2="{x0}" y2="{_num(y)}" stroke="black"/>')
        out.append(f'<text x="{x0 - 7}" y="{_num(y + 4)}" text-anchor="end">{t:.3g}</text>')
    xticks = cats if categorical else _ticks(xlo, xhi)
    for t in xticks:
        x = px(t)
        out.append(f'<line x1="{_num(x)}" y1="{y0}" x2="{_num(x)}" y2="{y0 + 4}" stroke="black"/>')
        text = _label(t) if categorical else f"{t:.3g}"
        out.append(f'<text x="{_num(x)}" y="{y0 + 18}" text-anchor="middle">{escape(text)}</text>')
    out.append(f'<text x="{x0 + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{MARGIN["top"] + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {MARGIN["top"] + ph / 2})">{escape(ylabel)}</text>'
    )
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if s.lo is not None and s.hi is not None:
            for seg in _segments(s.x, s.lo, s.hi):
                upper = " ".join(f"{_num(px(x))},{_num(py(h))}" for x, _, h in seg)
                lower = " ".join(f"{_num(px(x))},{_num(py(lo))}" for x, lo, _ in reversed(seg))
                out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
        for seg in _segments(s.x, s.y):
            pts = " ".join(f"{_num(px(x))},{_num(py(y))}" for x, y in seg)
            out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
            for x, y in seg:
                out.append(f'<circle cx="{_num(px(x))}" cy="{_num(py(y))}" r="2.5" fill="{color}"/>')
        ly = MARGIN["top"] + 12 + 18 * i
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _segments(x, *cols):
    """Runs of consecutive points where every column is finite."""
    seg = []
    for row in zip(x, *cols):
        if all(_ok(v) for v in row[1:]):
            seg.append(row)
        elif seg:
            yield seg
            seg = []
    if seg:
        yield seg


def save_svg(path, svg: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    return path
