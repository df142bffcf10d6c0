"""
Hand-emitted SVG figures (scatter with fitted line, line plots).
Fixed viewBox and 6-significant-digit numbers: same data, same bytes.
"""
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 360
MARGIN = 56
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def fmt(v: float) -> str:
    return f"{float(v):.6g}"


class _Axes:
    def __init__(self, xs: np.ndarray, ys: np.ndarray):
        self.x0, self.x1 = self._span(xs)
        self.y0, self.y1 = self._span(ys)

    @staticmethod
    def _span(v: np.ndarray) -> tuple[float, float]:
        v = v[np.isfinite(v)]
        if v.size == 0:
            return 0.0, 1.0
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad

    def px(self, x) -> float:
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def py(self, y) -> float:
        return HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def _frame(axes: _Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    left, right, top, bottom = MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<path d="M{left} {top}V{bottom}H{right}" fill="none" stroke="black"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]
    for v, anchor in ((axes.x0, "start"), (axes.x1, "end")):
        parts.append(f'<text x="{fmt(axes.px(v))}" y="{bottom + 16}" text-anchor="{anchor}" font-size="10">{fmt(v)}</text>')
    for v in (axes.y0, axes.y1):
        parts.append(f'<text x="{left - 4}" y="{fmt(axes.py(v))}" text-anchor="end" font-size="10">{fmt(v)}</text>')
    return parts


def scatter(x, y, title: str, xlabel: str, ylabel: str, fit: bool = True, note: str = "") -> str:
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    axes = _Axes(xs, ys)
    parts = _frame(axes, title, xlabel, ylabel)
    for a, b in zip(xs, ys):
        if np.isfinite(a) and np.isfinite(b):
            parts.append(f'<circle cx="{fmt(axes.px(a))}" cy="{fmt(axes.py(b))}" r="3" fill="{PALETTE[0]}"/>')
    keep = np.isfinite(xs) & np.isfinite(ys)
    if fit and keep.sum() >= 2 and np.ptp(xs[keep]) > 0:
        slope, intercept = np.polyfit(xs[keep], ys[keep], 1)
        xa, xb = xs[keep].min(), xs[keep].max()
        parts.append(
            f'<line x1="{fmt(axes.px(xa))}" y1="{fmt(axes.py(intercept + slope * xa))}" '
            f'x2="{fmt(axes.px(xb))}" y2="{fmt(axes.py(intercept + slope * xb))}" stroke="{PALETTE[3]}"/>'
        )
    if note:
        parts.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN - 8}" text-anchor="end" font-size="11">{escape(note)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_plot(series: dict, title: str, xlabel: str, ylabel: str, markers: dict | None = None) -> str:
    """`series` maps a label to (x, y); optional `markers` maps a label to an x position."""
    xs = np.concatenate([np.asarray(x, dtype=np.float64) for x, _ in series.values()]) if series else np.zeros(0)
    ys = np.concatenate([np.asarray(y, dtype=np.float64) for _, y in series.values()]) if series else np.zeros(0)
    axes = _Axes(xs, ys)
    parts = _frame(axes, title, xlabel, ylabel)
    for i, (label, (x, y)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = [(a, b) for a, b in zip(np.asarray(x, float), np.asarray(y, float)) if np.isfinite(a) and np.isfinite(b)]
        if pts:
            d = " ".join(f"{fmt(axes.px(a))},{fmt(axes.py(b))}" for a, b in pts)
            parts.append(f'<polyline points="{d}" fill="none" stroke="{color}"><title>{escape(str(label))}</title></polyline>')
        if markers and markers.get(label) is not None and np.isfinite(markers[label]):
            mx = fmt(axes.px(markers[label]))
            parts.append(f'<line x1="{mx}" y1="{MARGIN}" x2="{mx}" y2="{HEIGHT - MARGIN}" stroke="{color}" stroke-dasharray="3 3"/>')
        parts.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 12 * i}" font-size="9" fill="{color}">{escape(str(label))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
