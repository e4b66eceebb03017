"""CSV tables and dependency-free SVG plots.

Every artifact carries a provenance block (tool version, config hash, seed):
CSV files get ``#``-prefixed comment lines, SVG files a ``<metadata>`` element.
"""
from __future__ import annotations

import csv
import io
import json
import math
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 420
ML, MR, MT, MB = 70, 20, 30, 50


def provenance(seed=None, config_hash: str = "", **extra) -> dict:
    from . import __version__

    d = {"tool_version": __version__, "config_hash": config_hash, "seed": seed}
    d.update(extra)
    return d


def csv_text(columns: Sequence[str], rows: Iterable[Mapping], meta: Optional[dict] = None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {v}\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="raise", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    return buf.getvalue()


def read_csv_rows(text: str) -> Tuple[List[str], List[dict]]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    r = csv.DictReader(lines)
    return list(r.fieldnames or []), list(r)


# -- marching squares -------------------------------------------------------

# edge ids: 0 bottom (c00-c10), 1 right (c10-c11), 2 top (c01-c11), 3 left (c00-c01)
_CASES = {
    0: [], 15: [],
    1: [(3, 0)], 14: [(3, 0)],
    2: [(0, 1)], 13: [(0, 1)],
    3: [(3, 1)], 12: [(3, 1)],
    4: [(1, 2)], 11: [(1, 2)],
    6: [(0, 2)], 9: [(0, 2)],
    7: [(3, 2)], 8: [(3, 2)],
}


def marching_squares(x: np.ndarray, y: np.ndarray, z: np.ndarray, level: float) -> List[Tuple[Tuple[float, float], Tuple[float, float]]]:
    """Line segments of the ``level`` iso-line of ``z[i, j]`` sampled at ``(x[i], y[j])``.

    NaN cells are skipped. Saddles are split using the cell-centre average.
    """
    z = np.asarray(z, dtype=float)
    nx, ny = z.shape
    segs = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            c00, c10, c11, c01 = z[i, j], z[i + 1, j], z[i + 1, j + 1], z[i, j + 1]
            if np.isnan([c00, c10, c11, c01]).any():
                continue
            idx = (c00 >= level) | ((c10 >= level) << 1) | ((c11 >= level) << 2) | ((c01 >= level) << 3)
            if idx in (5, 10):
                centre = (c00 + c10 + c11 + c01) / 4.0 >= level
                if (idx == 5) == centre:
                    pairs = [(3, 2), (0, 1)]
                else:
                    pairs = [(3, 0), (1, 2)]
            else:
                pairs = _CASES[idx]

            def point(edge):
                if edge == 0:
                    a, b, p, q = c00, c10, (x[i], y[j]), (x[i + 1], y[j])
                elif edge == 1:
                    a, b, p, q = c10, c11, (x[i + 1], y[j]), (x[i + 1], y[j + 1])
                elif edge == 2:
                    a, b, p, q = c01, c11, (x[i], y[j + 1]), (x[i + 1], y[j + 1])
                else:
                    a, b, p, q = c00, c01, (x[i], y[j]), (x[i], y[j + 1])
                t = 0.5 if b == a else (level - a) / (b - a)
                return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))

            for e1, e2 in pairs:
                segs.append((point(e1), point(e2)))
    return segs


# -- SVG primitives ---------------------------------------------------------


class _Axes:
    def __init__(self, xlim, ylim, logx=False, logy=False):
        self.logx, self.logy = logx, logy
        self.x0, self.x1 = (math.log10(v) if logx else v for v in xlim)
        self.y0, self.y1 = (math.log10(v) if logy else v for v in ylim)
        if self.x1 == self.x0:
            self.x1 += 1
        if self.y1 == self.y0:
            self.y1 += 1

    def px(self, x):
        v = math.log10(x) if self.logx else x
        return ML + (v - self.x0) / (self.x1 - self.x0) * (W - ML - MR)

    def py(self, y):
        v = math.log10(y) if self.logy else y
        return H - MB - (v - self.y0) / (self.y1 - self.y0) * (H - MT - MB)


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**k for k in range(a, b + 1) if lo <= 10.0**k <= hi] or [lo, hi]
    return list(np.linspace(lo, hi, 5))


def _fmt(v):
    return f"{v:.3g}"


def _svg(body: List[str], title: str, xlabel: str, ylabel: str, ax: _Axes, xlim, ylim, meta: dict) -> str:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f"<metadata>{escape(json.dumps(meta, sort_keys=True, default=str))}</metadata>",
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(*xlim, ax.logx):
        x = ax.px(t)
        out.append(f'<line x1="{x:.1f}" y1="{H - MB}" x2="{x:.1f}" y2="{H - MB + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{H - MB + 16}" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(*ylim, ax.logy):
        y = ax.py(t)
        out.append(f'<line x1="{ML - 4}" y1="{y:.1f}" x2="{ML}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{ML - 6}" y="{y + 4:.1f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{W / 2:.1f}" y="{H - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{H / 2:.1f}" text-anchor="middle" transform="rotate(-90 16 {H / 2:.1f})">{escape(ylabel)}</text>'
    )
    out.extend(body)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def contour_svg(sweep, levels=(0.7, 0.9, 0.99), meta: Optional[dict] = None) -> str:
    """ETTR iso-lines over (failure rate, checkpoint write cost), both axes log."""
    if sweep.empty:
        raise ValueError("no cells")
    x = np.asarray(sweep.rf_values, dtype=float) * 1000.0
    y = np.asarray(sweep.wcp_values, dtype=float)
    xlim, ylim = (x.min(), x.max()), (y.min(), y.max())
    logx = x.min() > 0 and x.size > 1
    logy = y.min() > 0 and y.size > 1
    ax = _Axes(xlim, ylim, logx, logy)
    colours = ["#d62728", "#ff7f0e", "#2ca02c", "#1f77b4", "#9467bd"]
    body = []
    for k, lev in enumerate(levels):
        segs = marching_squares(x, y, sweep.ettr, lev)
        c = colours[k % len(colours)]
        body.append(f'<g class="level" data-level="{lev}" stroke="{c}" stroke-width="1.5" fill="none">')
        for (a, b) in segs:
            body.append(f'<line x1="{ax.px(a[0]):.2f}" y1="{ax.py(a[1]):.2f}" x2="{ax.px(b[0]):.2f}" y2="{ax.py(b[1]):.2f}"/>')
        body.append("</g>")
        if segs:
            a, b = segs[len(segs) // 2]
            lx, ly = ax.px((a[0] + b[0]) / 2), ax.py((a[1] + b[1]) / 2)
            body.append(f'<text class="level-label" x="{lx:.1f}" y="{ly - 3:.1f}" fill="{c}">ETTR {lev:g}</text>')
        else:
            body.append(f'<text class="level-label" x="{W - MR - 4}" y="{MT + 14 + 12 * k}" text-anchor="end" fill="{c}">ETTR {lev:g} (outside grid)</text>')
    title = f"Expected ETTR, {sweep.n_nodes} nodes"
    return _svg(body, title, "failure rate (per 1000 node-days)", "checkpoint write time w_cp (s)", ax, xlim, ylim, meta or {})


def line_svg(xs, series: Dict[str, Sequence[float]], title: str, xlabel: str, ylabel: str, meta: Optional[dict] = None, logy=False) -> str:
    xs = np.asarray(xs, dtype=float)
    allv = np.concatenate([np.asarray(v, dtype=float) for v in series.values()]) if series else np.zeros(1)
    allv = allv[np.isfinite(allv)]
    lo = float(allv[allv > 0].min()) if logy and (allv > 0).any() else 0.0
    hi = float(allv.max()) if allv.size else 1.0
    xlim = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    ylim = (lo, hi if hi > lo else lo + 1)
    ax = _Axes(xlim, ylim, False, logy)
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    body = []
    for k, (name, ys) in enumerate(series.items()):
        pts = [f"{ax.px(a):.1f},{ax.py(b):.1f}" for a, b in zip(xs, ys) if np.isfinite(b) and (not logy or b > 0)]
        c = colours[k % len(colours)]
        if pts:
            body.append(f'<polyline fill="none" stroke="{c}" points="{" ".join(pts)}"/>')
        body.append(f'<text x="{W - MR - 4}" y="{MT + 14 + 12 * k}" text-anchor="end" fill="{c}">{escape(name)}</text>')
    return _svg(body, title, xlabel, ylabel, ax, xlim, ylim, meta or {})


def bar_svg(labels: Sequence, groups: Dict[str, Sequence[float]], title: str, ylabel: str, meta: Optional[dict] = None) -> str:
    n = len(labels)
    stacked = np.zeros(n)
    for v in groups.values():
        stacked += np.asarray(v, dtype=float)
    hi = float(stacked.max()) if n and stacked.max() > 0 else 1.0
    ax = _Axes((0, max(n, 1)), (0, hi), False, False)
    colours = ["#1f77b4", "#ff7f0e", "#2ca02c"]
    body = []
    base = np.zeros(n)
    bw = (W - ML - MR) / max(n, 1)
    for k, (name, vals) in enumerate(groups.items()):
        c = colours[k % len(colours)]
        for i, v in enumerate(vals):
            y0, y1 = ax.py(base[i]), ax.py(base[i] + v)
            body.append(f'<rect x="{ML + i * bw + 2:.1f}" y="{y1:.1f}" width="{bw - 4:.1f}" height="{max(y0 - y1, 0):.1f}" fill="{c}"/>')
        base += np.asarray(vals, dtype=float)
        body.append(f'<text x="{W - MR - 4}" y="{MT + 14 + 12 * k}" text-anchor="end" fill="{c}">{escape(name)}</text>')
    for i, lab in enumerate(labels):
        body.append(f'<text x="{ML + (i + 0.5) * bw:.1f}" y="{H - MB + 28}" text-anchor="middle">{escape(str(lab))}</text>')
    svg = _svg(body, title, "job size (GPUs)", ylabel, ax, (0, max(n, 1)), (0, hi), meta or {})
    return svg


def mttf_svg(rows, meta: Optional[dict] = None) -> str:
    """Empirical vs projected MTTF by job size (log-log)."""
    rows = [r for r in rows if r.failures > 0 or r.projected_mttf_hours]
    if not rows:
        raise ValueError("no rows to plot")
    xs = [r.bucket for r in rows]
    emp = [r.empirical_mttf_hours for r in rows]
    proj = [r.projected_mttf_hours or math.nan for r in rows]
    vals = [v for v in emp + proj if v and math.isfinite(v) and v > 0]
    xlim = (min(xs), max(xs) if max(xs) > min(xs) else min(xs) * 2)
    ylim = (min(vals), max(vals) if max(vals) > min(vals) else min(vals) * 2)
    ax = _Axes(xlim, ylim, True, True)
    body = []
    pts = [f"{ax.px(x):.1f},{ax.py(p):.1f}" for x, p in zip(xs, proj) if math.isfinite(p)]
    if pts:
        body.append(f'<polyline fill="none" stroke="#d62728" points="{" ".join(pts)}"/>')
    for r in rows:
        if r.failures == 0:
            continue
        x = ax.px(r.bucket)
        lo, hi = r.ci90_hours
        body.append(f'<circle cx="{x:.1f}" cy="{ax.py(r.empirical_mttf_hours):.1f}" r="3" fill="#1f77b4"/>')
        if math.isfinite(hi) and lo > 0:
            body.append(f'<line x1="{x:.1f}" y1="{ax.py(max(lo, ylim[0])):.1f}" x2="{x:.1f}" y2="{ax.py(min(hi, ylim[1])):.1f}" stroke="#1f77b4"/>')
    body.append(f'<text x="{W - MR - 4}" y="{MT + 14}" text-anchor="end" fill="#1f77b4">empirical (90% CI)</text>')
    body.append(f'<text x="{W - MR - 4}" y="{MT + 26}" text-anchor="end" fill="#d62728">1/(N r_f)</text>')
    return _svg(body, "MTTF by job size", "job size (GPUs)", "MTTF (hours)", ax, xlim, ylim, meta or {})
