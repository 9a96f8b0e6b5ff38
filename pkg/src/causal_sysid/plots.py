"""Dependency-free SVG rendering: line charts for CSV histories and psi heatmaps."""
from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .causal_model import psi_from_csv
from .envsim import default_registry
from .files import atomic_write, read_csv

CELL = 14
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def gray_level(value: float) -> int:
    """0 -> 255 (white), 1 -> 0 (black), linear in between."""
    v = min(1.0, max(0.0, float(value)))
    return int(round(255 * (1.0 - v)))


def psi_heatmap_svg(psi, param_names, factor_names) -> str:
    psi = np.asarray(psi, dtype=float)
    rows, cols = psi.shape
    left = 8 + 7 * max((len(n) for n in param_names), default=1)
    top = 40
    width = left + cols * CELL + 20
    height = top + rows * CELL + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="monospace" font-size="10">']
    for j, name in enumerate(factor_names):
        x = left + j * CELL + CELL / 2
        out.append(f'<text x="{x}" y="{top - 6}" text-anchor="start" '
                   f'transform="rotate(-60 {x} {top - 6})">{escape(name)}</text>')
    for i, name in enumerate(param_names):
        y = top + i * CELL
        out.append(f'<text x="{left - 4}" y="{y + CELL - 3}" text-anchor="end">{escape(name)}</text>')
        for j in range(cols):
            g = gray_level(psi[i, j])
            out.append(f'<rect class="cell" x="{left + j * CELL}" y="{y}" width="{CELL}" height="{CELL}" '
                       f'fill="rgb({g},{g},{g})" stroke="#999" stroke-width="0.5" '
                       f'data-value="{psi[i, j]!r}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_psi_heatmap(psi_csv_path, out_svg_path):
    text = Path(psi_csv_path).read_text(encoding="utf-8")
    psi, params, factors = psi_from_csv(text)
    atomic_write(out_svg_path, psi_heatmap_svg(psi, params, factors))


def line_chart_svg(x, series: dict, title: str = "", width: int = 480, height: int = 300) -> str:
    """One polyline per named series over shared x values."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    allv = np.concatenate([v for v in ys.values()]) if ys else np.zeros(1)
    ymin, ymax = float(np.min(allv)), float(np.max(allv))
    if ymax == ymin:
        ymax = ymin + 1.0
    xmin, xmax = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if xmax == xmin:
        xmax = xmin + 1.0
    pl, pr, pt, pb = 50, 120, 30, 30
    w, h = width - pl - pr, height - pt - pb

    def px(v):
        return pl + (v - xmin) / (xmax - xmin) * w

    def py(v):
        return pt + h - (v - ymin) / (ymax - ymin) * h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="10">',
           f'<text x="{pl}" y="15" font-size="12">{escape(title)}</text>',
           f'<line x1="{pl}" y1="{pt + h}" x2="{pl + w}" y2="{pt + h}" stroke="black"/>',
           f'<line x1="{pl}" y1="{pt}" x2="{pl}" y2="{pt + h}" stroke="black"/>',
           f'<text x="{pl - 4}" y="{pt + 4}" text-anchor="end">{ymax:.4g}</text>',
           f'<text x="{pl - 4}" y="{pt + h}" text-anchor="end">{ymin:.4g}</text>',
           f'<text x="{pl}" y="{pt + h + 14}">{xmin:.4g}</text>',
           f'<text x="{pl + w}" y="{pt + h + 14}" text-anchor="end">{xmax:.4g}</text>']
    for i, (name, y) in enumerate(ys.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{pl + w + 6}" y="{pt + 12 * (i + 1)}" fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def traj_diff_chart(csv_text: str) -> str:
    """Mean trajectory difference per factor against iteration."""
    header, rows = read_csv(csv_text)
    if header[:3] != ["iteration", "factor", "mean"]:
        raise ValueError("line 1: expected columns iteration,factor,mean,...")
    series: dict = {}
    for row in rows:
        series.setdefault(row[1], []).append((int(row[0]), float(row[2])))
    its = sorted({i for pts in series.values() for i, _ in pts})
    return line_chart_svg(its, {k: [v for _, v in sorted(pts)] for k, pts in series.items()},
                          "mean trajectory difference")


def history_chart(csv_text: str, title: str, columns=None, registry=None) -> str:
    """Line chart of every (or the selected) column of a CSV whose first column is x.

    With a registry the parameter columns are drawn in normalized [0, 1] units.
    """
    header, rows = read_csv(csv_text)
    data = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), len(header))
    cols = columns or header[1:]
    series = {}
    for c in cols:
        y = data[:, header.index(c)]
        if registry is not None:
            spec = registry.spec(c)
            y = (y - spec.min) / (spec.max - spec.min)
        series[c] = y
    return line_chart_svg(data[:, 0], series, title)


def render_run_dir(run_dir, out_dir=None, columns=None) -> list:
    """Render every known CSV in a run directory; returns the written SVG paths."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    written = []
    diff = run_dir / "traj_diff.csv"
    if diff.exists():
        atomic_write(out_dir / "traj_diff.svg", traj_diff_chart(diff.read_text(encoding="utf-8")))
        written.append(out_dir / "traj_diff.svg")
    hist = run_dir / "epsilon_history.csv"
    if hist.exists():
        registry = None
        report = run_dir / "report.json"
        if report.exists():
            registry = default_registry(json.loads(report.read_text(encoding="utf-8"))["env"])
            columns = columns or registry.causal_names
        atomic_write(out_dir / "epsilon_history.svg",
                     history_chart(hist.read_text(encoding="utf-8"), "parameter history (normalized)"
                                   if registry else "parameter history", columns, registry))
        written.append(out_dir / "epsilon_history.svg")
    for psi_csv in sorted(run_dir.glob("psi_iter_*.csv")):
        target = out_dir / (psi_csv.stem + ".svg")
        emit_psi_heatmap(psi_csv, target)
        written.append(target)
    if not written:
        raise FileNotFoundError(f"no CSV histories found in {str(run_dir)!r}")
    return written
