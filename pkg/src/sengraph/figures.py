"""Plain SVG drawings: grouped bar charts and network line plots."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from .raster import _atomic_write

PALETTE = ("#3b6ea8", "#d9822b", "#4f9a5a", "#b54a4a", "#7b62a3", "#8c8c8c")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def bar_chart(path, labels: list[str], series: dict[str, list[float]], title: str = "",
              ymax: float = 1.0, width: int = 640, height: int = 360) -> None:
    """Grouped vertical bars, one group per label and one colour per series."""
    left, right, top, bottom = 50, 20, 40, 60
    pw, ph = width - left - right, height - top - bottom
    n_groups, n_series = len(labels), len(series)
    group_w = pw / max(n_groups, 1)
    bar_w = group_w * 0.8 / max(n_series, 1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for k in range(6):
        v = ymax * k / 5
        y = top + ph - ph * k / 5
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    for s, (name, values) in enumerate(series.items()):
        colour = PALETTE[s % len(PALETTE)]
        for g, v in enumerate(values):
            h = ph * max(0.0, min(v, ymax)) / ymax
            x = left + g * group_w + group_w * 0.1 + s * bar_w
            out.append(f'<rect x="{x:.1f}" y="{top + ph - h:.1f}" width="{bar_w:.1f}" height="{h:.1f}" '
                       f'fill="{colour}"><title>{escape(name)} {v:.4f}</title></rect>')
        lx = left + s * 110
        out.append(f'<rect x="{lx}" y="{height - 20}" width="10" height="10" fill="{colour}"/>')
        out.append(f'<text x="{lx + 14}" y="{height - 11}">{escape(name)}</text>')
    for g, lab in enumerate(labels):
        x = left + (g + 0.5) * group_w
        out.append(f'<text x="{x:.1f}" y="{top + ph + 16}" text-anchor="middle">{escape(lab)}</text>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append("</svg>")
    _atomic_write(Path(path), "\n".join(out) + "\n")


def network_plot(path, positions: dict[int, tuple[float, float]], truth, predicted,
                 size: int = 640, title: str = "") -> None:
    """Overlay of true and predicted edges.

    Grey: true edges missed, blue: correctly predicted, red: false positives.
    """
    truth, predicted = set(truth), set(predicted)
    xs = [p[0] for p in positions.values()]
    ys = [p[1] for p in positions.values()]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    span = max(x1 - x0, y1 - y0, 1e-9)
    pad = 20

    def xy(i):
        x, y = positions[i]
        return pad + (x - x0) / span * (size - 2 * pad), size - pad - (y - y0) / span * (size - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}" '
           f'viewBox="0 0 {size} {size + 20}" font-family="sans-serif" font-size="12">',
           f'<rect width="{size}" height="{size + 20}" fill="white"/>']
    layers = [(sorted(truth - predicted), "#bbbbbb"), (sorted(truth & predicted), "#3b6ea8"),
              (sorted(predicted - truth), "#c0392b")]
    for pairs, colour in layers:
        for u, v in pairs:
            (ax, ay), (bx, by) = xy(u), xy(v)
            out.append(f'<line x1="{ax:.1f}" y1="{ay:.1f}" x2="{bx:.1f}" y2="{by:.1f}" '
                       f'stroke="{colour}" stroke-width="1.2"/>')
    for i in sorted(positions):
        x, y = xy(i)
        out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="1.8" fill="black"/>')
    if title:
        out.append(f'<text x="{pad}" y="{size + 12}">{escape(title)}</text>')
    out.append("</svg>")
    _atomic_write(Path(path), "\n".join(out) + "\n")
