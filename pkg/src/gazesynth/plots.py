"""Dependency-free SVG line charts: polylines, a frame and a few axis ticks."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, MARGIN = 640, 400, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _ticks(lo, hi, count=5):
    return np.linspace(lo, hi, count)


def line_chart(series, title="", x_label="", y_label=""):
    """Render ``{label: (x, y)}`` as an SVG document string."""
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(min(ys.min(), 0.0)), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    plot_w, plot_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def px(x):
        return MARGIN + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>',
        f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" transform="rotate(-90 14 {HEIGHT / 2})">{escape(y_label)}</text>',
    ]
    for t in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{px(t):.2f}" y1="{HEIGHT - MARGIN}" x2="{px(t):.2f}" y2="{HEIGHT - MARGIN + 5}" stroke="#444"/>')
        out.append(f'<text x="{px(t):.2f}" y="{HEIGHT - MARGIN + 17}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{MARGIN - 5}" y1="{py(t):.2f}" x2="{MARGIN}" y2="{py(t):.2f}" stroke="#444"/>')
        out.append(f'<text x="{MARGIN - 8}" y="{py(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    for i, (label, (x, y)) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(np.asarray(x, float), np.asarray(y, float)))
        out.append(f'<polyline points="{points}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        out.append(f'<text x="{WIDTH - MARGIN - 5}" y="{MARGIN + 15 + 14 * i}" text-anchor="end" fill="{colour}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def histogram_chart(real, synthetic, bins=100, title="velocity distribution"):
    """Overlay the normalised histograms of two samples on shared bins."""
    a, b = np.ravel(real), np.ravel(synthetic)
    lo, hi = float(min(a.min(), b.min())), float(max(a.max(), b.max()))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    centres = 0.5 * (edges[:-1] + edges[1:])
    series = {}
    for label, values in (("real", a), ("synthetic", b)):
        counts, _ = np.histogram(values, edges)
        series[label] = (centres, counts / max(counts.sum(), 1))
    return line_chart(series, title, "velocity", "mass")
