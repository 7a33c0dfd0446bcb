"""Minimal SVG line charts for sweep results.

Pure string templating, no drawing dependency; output is byte-stable
for identical inputs so chart files can be diffed across runs.
"""

from __future__ import annotations

from typing import Sequence

Point = tuple[float, float]
Series = Sequence[tuple[str, Sequence[Point]]]

_COLORS = ("#c0392b", "#2471a3", "#1e8449", "#9a7d0a", "#6c3483")

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 64, 24, 40, 48


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def line_chart(title: str, xlabel: str, ylabel: str, series: Series) -> str:
    pts = [p for _, data in series for p in data]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def px(x: float) -> float:
        return _ML + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y: float) -> float:
        return _MT + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="14">{title}</text>',
    ]
    for t in _ticks(y_lo, y_hi):
        y = py(t)
        out.append(
            f'<line x1="{_ML}" y1="{y:.1f}" x2="{_W - _MR}" y2="{y:.1f}" '
            f'stroke="#dddddd"/>'
        )
        out.append(
            f'<text x="{_ML - 6}" y="{y + 4:.1f}" text-anchor="end">{t:.2f}</text>'
        )
    for t in _ticks(x_lo, x_hi):
        x = px(t)
        out.append(
            f'<line x1="{x:.1f}" y1="{_MT}" x2="{x:.1f}" y2="{_MT + ph}" '
            f'stroke="#eeeeee"/>'
        )
        out.append(
            f'<text x="{x:.1f}" y="{_MT + ph + 16}" text-anchor="middle">{t:.2f}</text>'
        )
    out.append(
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" '
        f'stroke="#333333"/>'
    )
    out.append(
        f'<text x="{_W / 2:.1f}" y="{_H - 10}" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="16" y="{_MT + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MT + ph / 2:.1f})">{ylabel}</text>'
    )
    for i, (label, data) in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in data)
        out.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="2"/>'
        )
        for x, y in data:
            out.append(
                f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>'
            )
        lx, ly = _W - _MR - 150, _MT + 14 + 18 * i
        out.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 24}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        out.append(f'<text x="{lx + 30}" y="{ly}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path: str, title: str, xlabel: str, ylabel: str, series: Series) -> None:
    with open(path, "w") as fh:
        fh.write(line_chart(title, xlabel, ylabel, series))
