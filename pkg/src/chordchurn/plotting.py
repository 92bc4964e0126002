"""Figures rendered from result rows.

matplotlib is imported lazily with the Agg backend so that the library and
the CSV paths never need a display or the plotting stack.
"""

from __future__ import annotations

import os
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .harness import Report, ResultRow

__all__ = ["plot_rows", "plot_report"]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _label(r: ResultRow, fields: Sequence[str]) -> str:
    parts = [r.strategy]
    for f in fields:
        parts.append(f"{f}={getattr(r, f):g}")
    return " ".join(parts)


def _varying(rows: Sequence[ResultRow]) -> list[str]:
    return [f for f in ("N", "b", "beta", "a", "c") if len({getattr(r, f) for r in rows}) > 1]


def plot_rows(rows: Sequence[ResultRow], path: str | os.PathLike, title: str | None = None) -> Path:
    """One figure for a results file; the layout follows what the rows contain."""
    plt = _pyplot()
    rows = [r for r in rows if r.converged and r.L is not None and r.source != "comparison"]
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    if rows and all(r.t is not None for r in rows):
        _cost_profile(ax, rows)
    elif rows and all(r.r is None for r in rows):
        _nochurn(ax, rows)
    elif rows and rows[0].experiment == "fig3_scaled_collapse":
        _collapse(ax, rows)
    else:
        _vs_r(ax, rows)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _vs_r(ax, rows):
    vary = _varying(rows)
    groups = defaultdict(list)
    for r in rows:
        groups[(r.source, _label(r, vary))].append(r)
    for (source, label), rs in sorted(groups.items()):
        rs.sort(key=lambda r: r.r)
        x = np.array([r.r for r in rs])
        y = np.array([r.L for r in rs])
        if source == "simulated":
            err = np.array([r.ci_halfwidth or 0.0 for r in rs])
            ax.errorbar(x, y, yerr=err, fmt="o", capsize=3, label=f"{label} (sim)")
        else:
            ax.plot(x, y, "-", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("r")
    ax.set_ylabel("average lookup length L")
    ax.legend(fontsize=7)


def _collapse(ax, rows):
    byN = defaultdict(list)
    for r in rows:
        if r.source == "analytic" and r.f is not None:
            byN[r.N].append(r)
    fmax = 0.0
    for N, rs in sorted(byN.items()):
        f = np.array([r.f for r in rs])
        y = np.array([(r.L - r.A) / r.A for r in rs])
        ax.plot(f, y, "o", ms=4, label=f"N={N}")
        fmax = max(fmax, f.max())
    ff = np.linspace(0.0, fmax, 100)
    ax.plot(ff, ff + 3 * ff**2, "k-", lw=1, label="f + 3f^2")
    ax.set_xlabel("f")
    ax.set_ylabel("(L - A)/A")
    ax.legend(fontsize=7)


def _nochurn(ax, rows):
    rows = sorted(rows, key=lambda r: r.N)
    n = np.array([r.N for r in rows], dtype=float)
    ax.plot(n, [r.L for r in rows], "o-", label="exact recursion")
    ref = [(r.N, r.reference) for r in rows if r.reference is not None]
    if ref:
        ax.plot(*zip(*ref), "k--", lw=1, label="1 + ((b-1)/b) log_b N")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("N")
    ax.set_ylabel("average lookup length L")
    ax.legend(fontsize=7)


def _cost_profile(ax, rows):
    groups = defaultdict(list)
    for r in rows:
        groups[(r.strategy, r.N, r.r)].append(r)
    for (s, N, rr), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or 0.0)):
        rs.sort(key=lambda r: r.t)
        label = f"N={N} no churn" if rr is None else f"N={N} {s} r={rr:g}"
        ax.plot([r.t for r in rs], [r.L for r in rs], ".-", label=label)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("distance t")
    ax.set_ylabel("expected cost C_t")
    ax.legend(fontsize=7)


def plot_report(report: Report, path: str | os.PathLike) -> Path:
    """Paired values and their relative error, one marker per grid point."""
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    la = np.array([p[1] for p in report.points])
    lb = np.array([p[2] for p in report.points])
    err = np.array([p[3] for p in report.points])
    if la.size:
        lo, hi = min(la.min(), lb.min()), max(la.max(), lb.max())
        ax1.plot([lo, hi], [lo, hi], "k--", lw=1)
    ax1.plot(lb, la, "o")
    ax1.set_xlabel("L (second file)")
    ax1.set_ylabel("L (first file)")
    ax2.plot(np.arange(err.size), err, "o")
    ax2.axhline(report.max_tol, color="r", lw=1, label="max tolerance")
    ax2.axhline(report.median_tol, color="orange", lw=1, label="median tolerance")
    ax2.set_xlabel("grid point")
    ax2.set_ylabel("relative error")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
