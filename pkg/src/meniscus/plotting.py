"""Figures written next to the CSV outputs (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .mesh import Mesh  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def series_figure(header: Sequence[str], data: np.ndarray, path, *, x: str = "t",
                  groups: Sequence[Sequence[str]] | None = None, title: str = "") -> Path:
    """One panel per column group against column ``x``."""
    cols = list(header)
    if groups is None:
        groups = [[c] for c in cols if c not in (x, "step")]
    groups = [[c for c in g if c in cols] for g in groups]
    groups = [g for g in groups if g]
    fig, axes = plt.subplots(len(groups), 1, figsize=(6, 2.2 * len(groups)), sharex=True,
                             squeeze=False)
    xs = data[:, cols.index(x)] if len(data) else np.zeros(0)
    for ax, group in zip(axes[:, 0], groups):
        for c in group:
            ax.plot(xs, data[:, cols.index(c)] if len(data) else [], label=c)
        ax.legend(loc="best", fontsize=8)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel(x)
    if title:
        axes[0, 0].set_title(title)
    return _save(fig, path)


def convergence_figure(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    h = np.asarray(report.h)
    for key, errs in report.errors.items():
        ax.loglog(h, errs, "o-", label=f"{key} (order {report.observed(key):.2f})")
    ref = np.asarray(report.errors[next(iter(report.errors))])
    for order in (1, 2):
        ax.loglog(h, ref[0] * (h / h[0]) ** order, "k:", lw=0.8)
    ax.set_xlabel("h")
    ax.set_ylabel("L2 error")
    ax.set_title(report.name)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def profile_figure(depth: np.ndarray, numeric: Sequence[np.ndarray], exact: Sequence[np.ndarray],
                   labels: Sequence[str], path, *, xlabel: str = "p / p0",
                   ylabel: str = "depth / L") -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 5))
    for num, ex, lab in zip(numeric, exact, labels):
        line, = ax.plot(ex, depth, "-", lw=1, label=f"series {lab}")
        ax.plot(num, depth, ".", color=line.get_color(), ms=3)
    ax.invert_yaxis()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def field_figure(mesh: Mesh, values: np.ndarray, path, *, title: str = "",
                 cmap: str = "viridis") -> Path:
    """Element-wise (P0) or nodal (P1) scalar field on the triangulation."""
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    x, y = mesh.vertices.T
    if len(values) == mesh.n_elements:
        art = ax.tripcolor(x, y, mesh.elements, facecolors=values, cmap=cmap)
    elif len(values) == mesh.n_vertices:
        art = ax.tripcolor(x, y, mesh.elements, values, shading="gouraud", cmap=cmap)
    else:
        raise ValueError("values must be per element or per vertex")
    fig.colorbar(art, ax=ax)
    ax.set_aspect("equal")
    ax.set_title(title)
    return _save(fig, path)
