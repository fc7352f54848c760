"""Minimal static SVG charts: overlaid histograms, heatmaps and line plots.

Output is plain text with fixed number formatting so identical inputs give
byte-identical files.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 60, 20, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _f(x):
    return f"{x:.2f}"


def _frame(title, xlabel, ylabel, x0, x1, y0, y1):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{H / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>',
        f'<line x1="{PAD_L}" y1="{H - PAD_B}" x2="{W - PAD_R}" y2="{H - PAD_B}" stroke="black"/>',
        f'<line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{H - PAD_B}" stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = x0 + frac * (x1 - x0)
        px = PAD_L + frac * (W - PAD_L - PAD_R)
        parts.append(
            f'<text x="{_f(px)}" y="{H - PAD_B + 16}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="10">{xv:.3g}</text>'
        )
        yv = y0 + frac * (y1 - y0)
        py = H - PAD_B - frac * (H - PAD_T - PAD_B)
        parts.append(
            f'<text x="{PAD_L - 6}" y="{_f(py + 3)}" text-anchor="end" font-family="sans-serif" '
            f'font-size="10">{yv:.3g}</text>'
        )
    return parts


def _sx(x, x0, x1):
    return PAD_L + (x - x0) / (x1 - x0) * (W - PAD_L - PAD_R)


def _sy(y, y0, y1):
    return H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B)


def _legend(names):
    out = []
    for i, name in enumerate(names):
        y = PAD_T + 14 * i
        c = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{W - PAD_R - 110}" y="{y}" width="10" height="10" fill="{c}"/>')
        out.append(
            f'<text x="{W - PAD_R - 95}" y="{y + 9}" font-family="sans-serif" font-size="11">{escape(name)}</text>'
        )
    return out


def histogram_svg(series: dict, bins=40, title="", xlabel="", value_range=None) -> str:
    """Density histograms of each named sample, drawn as step outlines."""
    arrays = {k: np.asarray(v, dtype=np.float64).ravel() for k, v in series.items()}
    allv = np.concatenate([a for a in arrays.values() if a.size]) if arrays else np.zeros(1)
    lo, hi = value_range or (float(allv.min()), float(allv.max()))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    dens = {k: np.histogram(a, bins=edges, density=True)[0] if a.size else np.zeros(bins) for k, a in arrays.items()}
    ymax = max(float(d.max()) for d in dens.values()) if dens else 1.0
    ymax = ymax if ymax > 0 else 1.0
    parts = _frame(title, xlabel, "density", lo, hi, 0.0, ymax)
    for i, (name, d) in enumerate(dens.items()):
        pts = [(_sx(edges[0], lo, hi), _sy(0, 0, ymax))]
        for j, h in enumerate(d):
            pts.append((_sx(edges[j], lo, hi), _sy(h, 0, ymax)))
            pts.append((_sx(edges[j + 1], lo, hi), _sy(h, 0, ymax)))
        pts.append((_sx(edges[-1], lo, hi), _sy(0, 0, ymax)))
        path = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        c = PALETTE[i % len(PALETTE)]
        parts.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="1.5"/>')
    parts += _legend(list(dens))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def heatmap_svg(mass, x_edges, y_edges, title="", xlabel="", ylabel="") -> str:
    """Grey-scale heatmap of a 2D table indexed [x_bin, y_bin]; log-scaled shading."""
    m = np.asarray(mass, dtype=np.float64)
    x0, x1, y0, y1 = float(x_edges[0]), float(x_edges[-1]), float(y_edges[0]), float(y_edges[-1])
    parts = _frame(title, xlabel, ylabel, x0, x1, y0, y1)
    top = m.max() if m.size and m.max() > 0 else 1.0
    shade = np.log1p(1000 * m / top) / np.log1p(1000)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            if m[i, j] <= 0:
                continue
            g = int(round(255 * (1 - shade[i, j])))
            xa, xb = _sx(x_edges[i], x0, x1), _sx(x_edges[i + 1], x0, x1)
            ya, yb = _sy(y_edges[j + 1], y0, y1), _sy(y_edges[j], y0, y1)
            parts.append(
                f'<rect x="{_f(xa)}" y="{_f(ya)}" width="{_f(xb - xa)}" height="{_f(yb - ya)}" '
                f'fill="rgb({g},{g},{g})"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def lines_svg(series: dict, title="", xlabel="time (s)", ylabel="speed (m/s)") -> str:
    """Line plot of each named 1 Hz sequence."""
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in series.items()}
    xmax = max((a.size - 1 for a in arrays.values()), default=1) or 1
    ymax = max((float(a.max()) for a in arrays.values() if a.size), default=1.0) or 1.0
    parts = _frame(title, xlabel, ylabel, 0.0, float(xmax), 0.0, ymax)
    for i, (name, a) in enumerate(arrays.items()):
        path = " ".join(f"{_f(_sx(t, 0, xmax))},{_f(_sy(v, 0, ymax))}" for t, v in enumerate(a))
        c = PALETTE[i % len(PALETTE)]
        parts.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="1"/>')
    parts += _legend(list(arrays))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
