"""Static SVG figures written by hand so the bytes depend only on the input."""
from __future__ import annotations

import math

import numpy as np

from .fit import fit_loglog

W, H, PAD = 480, 360, 56
KINDS = ("moments", "convergence", "heatmap")


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Axes:
    def __init__(self, xs, ys, logx=True, logy=True):
        tx = np.log10 if logx else (lambda a: np.asarray(a, dtype=float))
        ty = np.log10 if logy else (lambda a: np.asarray(a, dtype=float))
        self.tx, self.ty = tx, ty
        X, Y = tx(np.asarray(xs, dtype=float)), ty(np.asarray(ys, dtype=float))
        self.x0, self.x1 = float(X.min()), float(X.max())
        self.y0, self.y1 = float(Y.min()), float(Y.max())
        if self.x1 == self.x0:
            self.x0, self.x1 = self.x0 - 0.5, self.x1 + 0.5
        if self.y1 == self.y0:
            self.y0, self.y1 = self.y0 - 0.5, self.y1 + 0.5
        mx, my = 0.05 * (self.x1 - self.x0), 0.08 * (self.y1 - self.y0)
        self.x0, self.x1, self.y0, self.y1 = self.x0 - mx, self.x1 + mx, self.y0 - my, self.y1 + my

    def px(self, x):
        return PAD + (float(self.tx(x)) - self.x0) / (self.x1 - self.x0) * (W - 2 * PAD)

    def py(self, y):
        return H - PAD - (float(self.ty(y)) - self.y0) / (self.y1 - self.y0) * (H - 2 * PAD)


def _frame(title, xlabel, ylabel):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{_esc(title)}</text>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">{_esc(xlabel)}</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {H / 2})">{_esc(ylabel)}</text>',
    ]


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _ticks(ax: _Axes, logx, logy):
    out = []
    for lo, hi, horiz in ((ax.x0, ax.x1, True), (ax.y0, ax.y1, False)):
        for v in np.linspace(lo, hi, 5):
            lab = f"{10 ** v:.3g}" if (logx if horiz else logy) else f"{v:.3g}"
            if horiz:
                x = PAD + (v - lo) / (hi - lo) * (W - 2 * PAD)
                out.append(f'<text x="{_f(x)}" y="{H - PAD + 16}" text-anchor="middle" font-size="10">{lab}</text>')
            else:
                y = H - PAD - (v - lo) / (hi - lo) * (H - 2 * PAD)
                out.append(f'<text x="{PAD - 4}" y="{_f(y + 3)}" text-anchor="end" font-size="10">{lab}</text>')
    return out


def _series(records, xkey, ykey, ekey=None):
    pts = sorted((float(r[xkey]), float(r[ykey]), float(r[ekey]) if ekey and r.get(ekey) is not None else None)
                 for r in records if r.get(xkey) is not None and r.get(ykey) is not None)
    return pts


def plot_svg(records, kind: str, title: str = "") -> str:
    """Return SVG text.  ``moments`` and ``convergence`` take record dicts, ``heatmap`` a 2D array."""
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {KINDS}")
    if records is None or len(records) == 0:
        raise ValueError("no records to plot")
    if kind == "heatmap":
        return _heatmap(np.asarray(records, dtype=float), title or "field")
    if kind == "moments":
        pts = _series(records, "lambda", "mean", "stderr")
        xl, yl = "lambda", "moment"
    else:
        key = "eps" if "eps" in records[0] else "eps_coarse"
        pts = _series(records, key, "distance" if "distance" in records[0] else "value")
        xl, yl = "eps", "distance"
    pts = [p for p in pts if p[0] > 0 and p[1] > 0]
    if not pts:
        raise ValueError("no positive data to plot")
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    ax = _Axes(xs, ys)
    out = _frame(title or kind, xl, yl) + _ticks(ax, True, True)
    for x, y, e in pts:
        out.append(f'<circle cx="{_f(ax.px(x))}" cy="{_f(ax.py(y))}" r="3" fill="black"/>')
        if e:
            lo, hi = max(y - e, y * 1e-3), y + e
            out.append(f'<line x1="{_f(ax.px(x))}" y1="{_f(ax.py(lo))}" x2="{_f(ax.px(x))}" '
                       f'y2="{_f(ax.py(hi))}" stroke="black"/>')
    if len(pts) >= 3:
        slope, icpt, se = fit_loglog(pts if all(p[2] for p in pts) else [(x, y) for x, y, _ in pts])
        xa, xb = min(xs), max(xs)
        ya, yb = math.exp(icpt) * xa ** slope, math.exp(icpt) * xb ** slope
        out.append(f'<line x1="{_f(ax.px(xa))}" y1="{_f(ax.py(ya))}" x2="{_f(ax.px(xb))}" y2="{_f(ax.py(yb))}" '
                   f'stroke="crimson"/>')
        out.append(f'<text x="{W - PAD - 4}" y="{PAD + 16}" text-anchor="end" font-size="12" fill="crimson">'
                   f'slope {slope:.3f} ± {se:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _heatmap(a, title):
    if a.ndim != 2:
        raise ValueError("heatmap needs a 2D field")
    n0, n1 = a.shape
    lo, hi = float(a.min()), float(a.max())
    span = hi - lo if hi > lo else 1.0
    cw, ch = (W - 2 * PAD) / n1, (H - 2 * PAD) / n0
    out = _frame(title, "x1", "x2")
    for i in range(n0):
        for j in range(n1):
            v = (a[i, j] - lo) / span
            r, b = int(255 * v), int(255 * (1 - v))
            out.append(f'<rect x="{_f(PAD + j * cw)}" y="{_f(PAD + i * ch)}" width="{_f(cw)}" height="{_f(ch)}" '
                       f'fill="rgb({r},0,{b})"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str, records, kind: str, title: str = "") -> str:
    svg = plot_svg(records, kind, title)
    with open(path, "w") as f:
        f.write(svg)
    return path
