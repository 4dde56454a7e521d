"""Figure rendering for reports and surfaces (written next to the CSV output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dupire import LocalVolSurface
from .experiments import ConvergenceReport

__all__ = ["loglog_figure", "surface_figure"]


def loglog_figure(report: ConvergenceReport, path: str, xlabel: str, title: str) -> None:
    """Log-log error plot: per-seed cells, seed-averaged points, fitted line."""
    fig, ax = plt.subplots(figsize=(6.0, 4.4))
    res = np.array([c.resolution for c in report.cells], dtype=float)
    err = np.array([c.error for c in report.cells])
    ax.loglog(res, err, ".", color="#9db8d2", ms=5, alpha=0.7, label="per-seed error")
    px = np.array([p[0] for p in report.points], dtype=float)
    py = np.array([p[1] for p in report.points])
    ax.loglog(px, py, "o", color="#1f4e79", ms=7, label="seed average")
    xs = np.array([px.min(), px.max()])
    ax.loglog(xs, np.exp(report.intercept) * xs**report.slope, "-", color="#c44e52",
              label=f"fit: slope {report.slope:.3f}")
    lo, hi = report.ci95
    ax.set_xlabel(xlabel)
    ax.set_ylabel("RMS error")
    ax.set_title(f"{title}\nslope {report.slope:.3f}, 95% CI [{lo:.3f}, {hi:.3f}]", fontsize=10)
    ax.grid(True, which="both", lw=0.4, alpha=0.5)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def surface_figure(surface: LocalVolSurface, path: str) -> None:
    """Heat map of the local-volatility node values."""
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    mesh = ax.pcolormesh(surface.strikes, surface.maturities, surface.sigma, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="local volatility")
    ax.set_xlabel("strike")
    ax.set_ylabel("maturity")
    ax.set_title("Dupire local-volatility surface", fontsize=10)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
