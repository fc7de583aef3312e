"""Minimal SVG plotting: polylines, scatter points and filled cells on one set of axes.

Only what the command line needs. Output is plain text built with format
strings, so identical inputs always give identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


@dataclass
class Figure:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    width: int = 720
    height: int = 420
    equal_aspect: bool = False
    _items: list = field(default_factory=list)

    margin_l, margin_r, margin_t, margin_b = 70, 150, 36, 50

    def line(self, x, y, label: str | None = None, color: str | None = None, width: float = 1.5):
        self._items.append(("line", np.asarray(x, float), np.asarray(y, float), label, color, width))

    def points(self, x, y, label: str | None = None, color: str | None = None, r: float = 1.5):
        self._items.append(("points", np.asarray(x, float), np.asarray(y, float), label, color, r))

    def cells(self, x_edges, y_edges, mask, label: str | None = None, color: str = "#9ecae1"):
        """Fill the cells where ``mask[i, j]`` is true; i runs along x."""
        self._items.append(("cells", np.asarray(x_edges, float), np.asarray(y_edges, float),
                            label, color, np.asarray(mask, bool)))

    def _limits(self):
        xs, ys = [], []
        for kind, x, y, *_ in self._items:
            xs.append(x[np.isfinite(x)])
            ys.append(y[np.isfinite(y)])
        x = np.concatenate(xs) if xs else np.array([0.0, 1.0])
        y = np.concatenate(ys) if ys else np.array([0.0, 1.0])
        if self.logx:
            x = x[x > 0]
        x0, x1 = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
        y0, y1 = (float(y.min()), float(y.max())) if y.size else (0.0, 1.0)
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        pad = 0.05 * (y1 - y0)
        return x0, x1, y0 - pad, y1 + pad

    def render(self) -> str:
        x0, x1, y0, y1 = self._limits()
        pw = self.width - self.margin_l - self.margin_r
        ph = self.height - self.margin_t - self.margin_b
        if self.equal_aspect:
            # stretch the shorter data range so one metre is the same length on both axes
            sx, sy = (x1 - x0) / pw, (y1 - y0) / ph
            if sx > sy:
                mid, half = (y0 + y1) / 2, sx * ph / 2
                y0, y1 = mid - half, mid + half
            else:
                mid, half = (x0 + x1) / 2, sy * pw / 2
                x0, x1 = mid - half, mid + half
        lx0, lx1 = (math.log10(x0), math.log10(x1)) if self.logx else (x0, x1)

        def X(v):
            v = np.log10(v) if self.logx else v
            return self.margin_l + (v - lx0) / (lx1 - lx0) * pw

        def Y(v):
            return self.margin_t + (y1 - v) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'font-family="sans-serif" font-size="11">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>']
        legend = []
        for n, (kind, x, y, label, color, extra) in enumerate(self._items):
            color = color or PALETTE[n % len(PALETTE)]
            if kind == "line":
                ok = np.isfinite(x) & np.isfinite(y) & ((x > 0) if self.logx else True)
                pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(X(x[ok]), Y(y[ok])))
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="{extra}" points="{pts}"/>')
            elif kind == "points":
                for a, b in zip(X(x), Y(y)):
                    out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="{extra}" fill="{color}"/>')
            else:
                # one rectangle per run of filled cells along y keeps the file small
                mask = extra
                for i in range(mask.shape[0]):
                    j = 0
                    while j < mask.shape[1]:
                        if not mask[i, j]:
                            j += 1
                            continue
                        k = j
                        while k < mask.shape[1] and mask[i, k]:
                            k += 1
                        ax, bx = X(x[i]), X(x[i + 1])
                        ay, by = Y(y[k]), Y(y[j])
                        out.append(f'<rect x="{_fmt(ax)}" y="{_fmt(ay)}" width="{_fmt(bx - ax)}" '
                                   f'height="{_fmt(by - ay)}" fill="{color}"/>')
                        j = k
            if label:
                legend.append((label, color))

        # axes, ticks, labels
        bx, by = self.margin_l, self.margin_t
        out.append(f'<rect x="{bx}" y="{by}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
        if self.logx:
            xt = [10.0 ** e for e in range(math.ceil(lx0), math.floor(lx1) + 1)]
            xl = [f"1e{int(round(math.log10(t)))}" for t in xt]
        else:
            xt = _nice_ticks(x0, x1)
            xl = [f"{t:g}" for t in xt]
        for t, lab in zip(xt, xl):
            px = X(t)
            out.append(f'<line x1="{_fmt(px)}" y1="{by + ph}" x2="{_fmt(px)}" y2="{by + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{_fmt(px)}" y="{by + ph + 16}" text-anchor="middle">{lab}</text>')
        for t in _nice_ticks(y0, y1):
            py = Y(t)
            out.append(f'<line x1="{bx - 4}" y1="{_fmt(py)}" x2="{bx}" y2="{_fmt(py)}" stroke="black"/>')
            out.append(f'<text x="{bx - 6}" y="{_fmt(py + 4)}" text-anchor="end">{t:g}</text>')
        out.append(f'<text x="{bx + pw / 2}" y="{self.height - 12}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text transform="translate(16,{by + ph / 2}) rotate(-90)" text-anchor="middle">'
                   f'{escape(self.ylabel)}</text>')
        out.append(f'<text x="{bx + pw / 2}" y="22" text-anchor="middle" font-size="14">{escape(self.title)}</text>')
        for n, (label, color) in enumerate(legend):
            ly = by + 10 + 16 * n
            lx = bx + pw + 12
            out.append(f'<rect x="{lx}" y="{ly - 8}" width="12" height="10" fill="{color}"/>')
            out.append(f'<text x="{lx + 18}" y="{ly + 1}">{escape(label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.render())
        return path


def edges(nodes: np.ndarray) -> np.ndarray:
    """Cell edges halfway between grid nodes, extended half a step at both ends."""
    nodes = np.asarray(nodes, float)
    if len(nodes) == 1:
        return np.array([nodes[0] - 0.5, nodes[0] + 0.5])
    mid = (nodes[1:] + nodes[:-1]) / 2
    return np.concatenate([[2 * nodes[0] - mid[0]], mid, [2 * nodes[-1] - mid[-1]]])
