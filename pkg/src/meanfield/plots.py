"""Deterministic SVG figures written without a plotting library."""
from __future__ import annotations

import math
import os

import numpy as np

from .errors import MissingData
from .marginals import GridDensity
from .tensorio import read_csv

W, H = 480, 320
MARGIN = 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(x):
    return f"{x:.2f}"


def _esc(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _header(title, extra=""):
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}"{extra}>',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="13">{_esc(title)}</text>',
    ]


def _scale(lo, hi, a, b, log=False):
    if log:
        lo, hi = math.log10(lo), math.log10(hi)
    if hi <= lo:
        hi = lo + 1.0

    def f(x):
        x = math.log10(x) if log else x
        return a + (x - lo) / (hi - lo) * (b - a)
    return f


def line_plot(series, title, xlabel, ylabel, logx=False, logy=False, extra_attrs=""):
    """``series``: list of ``(label, xs, ys, dashed)``; returns SVG text."""
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    if logx:
        xs = xs[xs > 0]
    if logy:
        ys = ys[ys > 0]
    if not xs.size or not ys.size:
        raise MissingData("nothing to plot")
    sx = _scale(xs.min(), xs.max(), MARGIN, W - 20, logx)
    sy = _scale(ys.min(), ys.max(), H - MARGIN, 30, logy)
    out = _header(title, extra_attrs)
    out.append(f'<line x1="{MARGIN}" y1="{H - MARGIN}" x2="{W - 20}" y2="{H - MARGIN}" stroke="black"/>')
    out.append(f'<line x1="{MARGIN}" y1="{H - MARGIN}" x2="{MARGIN}" y2="30" stroke="black"/>')
    out.append(f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="11">{_esc(xlabel)}</text>')
    out.append(f'<text x="14" y="{H / 2}" text-anchor="middle" font-family="sans-serif" font-size="11" '
               f'transform="rotate(-90 14 {H / 2})">{_esc(ylabel)}</text>')
    for lab, v in (("min", (xs.min(), ys.min())), ("max", (xs.max(), ys.max()))):
        out.append(f'<text x="{_f(sx(v[0]))}" y="{H - MARGIN + 14}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="9">{v[0]:.3g}</text>')
        out.append(f'<text x="{MARGIN - 4}" y="{_f(sy(v[1]))}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="9">{v[1]:.3g}</text>')
    for i, (label, x, y, dashed) in enumerate(series):
        pts = [(a, b) for a, b in zip(np.asarray(x, float), np.asarray(y, float))
               if (a > 0 or not logx) and (b > 0 or not logy)]
        color = COLORS[i % len(COLORS)]
        path = " ".join(f"{_f(sx(a))},{_f(sy(b))}" for a, b in pts)
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{path}"/>')
        out.append(f'<text x="{W - 24}" y="{40 + 14 * i}" text-anchor="end" fill="{color}" '
                   f'font-family="sans-serif" font-size="10">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(values, title, xlabel="x", ylabel="v"):
    """Grey-scale image of a 2D array; first axis runs horizontally."""
    vals = np.asarray(values, float)
    nx, ny = vals.shape
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo if hi > lo else 1.0
    cw, ch = (W - MARGIN - 20) / nx, (H - MARGIN - 30) / ny
    out = _header(title)
    for i in range(nx):
        for j in range(ny):
            g = int(round(255 * (1 - (vals[i, j] - lo) / span)))
            out.append(f'<rect x="{_f(MARGIN + i * cw)}" y="{_f(H - MARGIN - (j + 1) * ch)}" '
                       f'width="{_f(cw + 0.05)}" height="{_f(ch + 0.05)}" fill="rgb({g},{g},{g})"/>')
    out.append(f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="11">{_esc(xlabel)}</text>')
    out.append(f'<text x="14" y="{H / 2}" text-anchor="middle" font-family="sans-serif" font-size="11" '
               f'transform="rotate(-90 14 {H / 2})">{_esc(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _columns(path):
    header, rows = read_csv(path)
    return {h: [r[i] for r in rows] for i, h in enumerate(header)}


def _floats(col):
    return [float(c) for c in col]


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def emit_plots(results_dir) -> list:
    """Render every recognised data file in ``results_dir``; returns the SVG paths."""
    if not os.path.isdir(results_dir):
        raise MissingData(f"{results_dir} is not a directory")
    out = []
    p = lambda name: os.path.join(results_dir, name)
    if os.path.exists(p("solution.mft")):
        dens = GridDensity.load(p("solution.mft"))
        if dens.spatial and dens.d == 1:
            out.append(_write(p("density.svg"), line_plot(
                [("rho", dens.x_centers(), dens.values, False)], "rho(x)", "x", "rho")))
        elif dens.spatial:
            out.append(_write(p("density.svg"), heatmap(dens.values, "f(x1, x2)", "x1", "x2")))
        else:
            out.append(_write(p("phase_space.svg"), heatmap(dens.values, "f(x, v)")))
    if os.path.exists(p("density.csv")):
        c = _columns(p("density.csv"))
        series = [(k, _floats(c["x"]), _floats(v), False) for k, v in c.items() if k != "x"]
        out.append(_write(p("rho.svg"), line_plot(series, "spatial density", "x", "rho")))
    if os.path.exists(p("energy.csv")):
        c = _columns(p("energy.csv"))
        t = _floats(c["time"])
        e = _floats(c["mean_energy_change"])
        slope = float(c["expected_slope"][0])
        attrs = f' data-expected-slope="{slope!r}"'
        out.append(_write(p("energy.svg"), line_plot(
            [("mean e_N(t) - e_N(0)", t, e, False), (f"slope {slope:g}", t, [slope * s for s in t], True)],
            "energy vs time", "t", "energy change", extra_attrs=attrs)))
    if os.path.exists(p("convergence.csv")):
        c = _columns(p("convergence.csv"))
        N = _floats(c["N"])
        series = [(k, N, _floats(c[k]), False) for k in ("l1_k1", "l1_k2", "l1") if k in c]
        out.append(_write(p("convergence.svg"), line_plot(
            series, "chaos distance vs N", "N", "distance", logx=True, logy=True)))
    if os.path.exists(p("bounds.csv")):
        c = _columns(p("bounds.csv"))
        k = _floats(c["k"])
        series = []
        for name in ("final_bound", "induction_bound", "measured"):
            if name in c:
                pts = [(a, float(b)) for a, b in zip(k, c[name]) if b not in ("", None)]
                if pts:
                    series.append((name, [a for a, _ in pts], [b for _, b in pts], name != "measured"))
        if series:
            out.append(_write(p("bounds.svg"), line_plot(series, "bounds vs k", "k", "X_k", logy=True)))
    if not out:
        raise MissingData(f"no recognised data files in {results_dir}")
    return out
