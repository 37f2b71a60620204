"""Optional figures for CLI reports.

Figures are drawn on bare :class:`matplotlib.figure.Figure` objects, so no
pyplot state or interactive backend is involved.  Every function takes plain
report data (the same dictionaries that go into the JSON files) and a path.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

from matplotlib.figure import Figure

STYLE = {
    "figsize": (5.0, 3.4),
    "dpi": 120,
}


def _new(xlabel: str, ylabel: str, title: str | None = None):
    fig = Figure(figsize=STYLE["figsize"], dpi=STYLE["dpi"], layout="constrained")
    ax = fig.add_subplot()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(alpha=0.3)
    return fig, ax


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    return path


def _positive(xs: Sequence[float], ys: Sequence[float]) -> tuple[list[float], list[float]]:
    pts = [(x, y) for x, y in zip(xs, ys) if y > 0]
    return [p[0] for p in pts], [p[1] for p in pts]


def tail_figure(profiles: Mapping[str, Sequence[Sequence[float]]], path: str | Path, fit: tuple[float, float] | None = None) -> Path:
    """Semi-log plot of ``f(r)`` per method; zeros are left out."""
    fig, ax = _new("r", "f(r)", "locality tail")
    for method, samples in profiles.items():
        rs, vs = _positive([s[0] for s in samples], [s[1] for s in samples])
        if rs:
            ax.semilogy(rs, vs, "o-", label=method)
    if fit is not None and fit[0] > 0:
        c, mu = fit
        rs = [s[0] for samples in profiles.values() for s in samples]
        if rs:
            grid = list(range(int(min(rs)), int(max(rs)) + 1))
            ax.semilogy(grid, [c * math.exp(-mu * r) for r in grid], "k--", lw=1, label=f"{c:.3g} exp(-{mu:.3g} r)")
    if ax.lines:
        ax.legend(fontsize=8)
    return _save(fig, path)


def plateau_figure(rows: Sequence[Mapping[str, float]], path: str | Path) -> Path:
    """Raw index against window size for both entropies, with the rounded value."""
    fig, ax = _new("window", "index (nats)", "window plateau")
    ws = [r["window"] for r in rows]
    ax.plot(ws, [r["raw_vn"] for r in rows], "o-", label="von Neumann")
    ax.plot(ws, [r["raw_renyi2"] for r in rows], "s--", label="Renyi-2")
    ax.step(ws, [r["rounded"] for r in rows], where="mid", color="k", lw=1, label="rounded")
    ax.legend(fontsize=8)
    return _save(fig, path)


def approximation_figure(rows: Sequence[Mapping[str, float]], path: str | Path) -> Path:
    """Certified single-block distances against the blocking ``j``."""
    fig, ax = _new("blocking j", "restricted distance", "radius-2 approximation")
    js = [r["j"] for r in rows]
    ax.plot(js, [r["upper"] for r in rows], "o-", label="upper")
    ax.plot(js, [r["lower"] for r in rows], "v--", label="lower")
    ax.axhline(1 / 384, color="k", lw=0.8, ls=":", label="1/384")
    ax.set_xticks(js)
    ax.legend(fontsize=8)
    return _save(fig, path)


def rotation_figure(rows: Sequence[Mapping[str, float]], path: str | Path) -> Path:
    """``||1 - u||`` against the near-inclusion constant, with the ``12 eps`` line."""
    fig, ax = _new("eps", "||1 - u||", "rotations into region algebras")
    eps = [r["eps"] for r in rows]
    ax.plot(eps, [r["deviation"] for r in rows], "o", ms=3, label="measured")
    if eps:
        top = max(eps)
        ax.plot([0, top], [0, 12 * top], "k--", lw=1, label="12 eps")
    ax.legend(fontsize=8)
    return _save(fig, path)


def hopping_figure(scaled: Sequence[float], path: str | Path) -> Path:
    """``r |h_r|`` for the fermionic translation, with the factor-two band."""
    fig, ax = _new("r", "r |h_r|", "translation hopping")
    rs = list(range(1, len(scaled) + 1))
    ax.plot(rs, scaled, "o-")
    ax.axhspan(0.5, 2.0, color="0.9", zorder=0)
    ax.set_xticks(rs)
    return _save(fig, path)
