"""Minimal, deterministic SVG line and bar charts."""
from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _num(v: float) -> str:
    return f"{v:.2f}"


def _scale(lo: float, hi: float, a: float, b: float):
    span = (hi - lo) or 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _frame(title: str, xlabel: str, ylabel: str, xlo, xhi, ylo, yhi) -> list[str]:
    x0, x1, y0, y1 = MARGIN, WIDTH - MARGIN // 2, HEIGHT - MARGIN, MARGIN // 2
    sx, sy = _scale(xlo, xhi, x0, x1), _scale(ylo, yhi, y0, y1)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="16" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{(y0 + y1) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(y0 + y1) / 2})">{escape(ylabel)}</text>',
    ]
    for k in range(5):
        xv = xlo + (xhi - xlo) * k / 4
        yv = ylo + (yhi - ylo) * k / 4
        out.append(f'<text x="{_num(sx(xv))}" y="{y0 + 16}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{x0 - 6}" y="{_num(sy(yv) + 4)}" text-anchor="end">{yv:.3g}</text>')
    return out


def line_chart(series: dict[str, tuple[Sequence[float], Sequence[float | None]]],
               title: str = "", xlabel: str = "", ylabel: str = "",
               ylim: tuple[float, float] | None = None) -> str:
    """One polyline per named series; ``None`` y-values break the line."""
    xs = [x for sx_, _ in series.values() for x in sx_]
    ys = [y for _, sy_ in series.values() for y in sy_ if y is not None]
    xlo, xhi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    ylo, yhi = ylim or ((min(ys), max(ys)) if ys else (0.0, 1.0))
    out = _frame(title, xlabel, ylabel, xlo, xhi, ylo, yhi)
    sx = _scale(xlo, xhi, MARGIN, WIDTH - MARGIN // 2)
    sy = _scale(ylo, yhi, HEIGHT - MARGIN, MARGIN // 2)
    for i, (name, (xv, yv)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        segment: list[str] = []
        segments = [segment]
        for x, y in zip(xv, yv):
            if y is None:
                segment = []
                segments.append(segment)
                continue
            segment.append(f"{_num(sx(x))},{_num(sy(y))}")
        for seg in segments:
            if seg:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                           f'points="{" ".join(seg)}"/>')
        ly = MARGIN // 2 + 16 * (i + 1)
        out.append(f'<rect x="{WIDTH - 150}" y="{ly - 9}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{WIDTH - 134}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(labels: Sequence[str], values: Sequence[float], title: str = "",
              xlabel: str = "", ylabel: str = "") -> str:
    n = max(len(values), 1)
    yhi = max(values) if values else 1.0
    out = _frame(title, xlabel, ylabel, 0.0, float(n), 0.0, yhi or 1.0)
    sy = _scale(0.0, yhi or 1.0, HEIGHT - MARGIN, MARGIN // 2)
    width = (WIDTH - MARGIN - MARGIN // 2) / n
    for i, (label, v) in enumerate(zip(labels, values)):
        x = MARGIN + i * width
        top = sy(v)
        out.append(f'<rect x="{_num(x + 1)}" y="{_num(top)}" width="{_num(width - 2)}" '
                   f'height="{_num(HEIGHT - MARGIN - top)}" fill="{PALETTE[0]}"/>')
        out.append(f'<text x="{_num(x + width / 2)}" y="{_num(top - 3)}" '
                   f'text-anchor="middle" font-size="10">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(svg: str, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
