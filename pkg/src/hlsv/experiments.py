"""Convergence studies: strong Euler error in time under coupled Brownian
refinement, pathwise interaction error between 2N- and N-donor leverage
under common random numbers, and the variance scheme's strong order.

Every study produces a :class:`ConvergenceReport` holding the per-cell
errors, seed-averaged points, and an OLS log-log fit with a t-based 95%
confidence interval.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import t as student_t

from .cir import HestonParams, feller_ratio, fte_step
from .noise import NoisePlan, coarsen, generate, iter_chunks
from .particles import SimConfig, simulate

__all__ = [
    "ConvergenceReport",
    "fit_loglog",
    "strong_convergence_study",
    "chaos_study",
    "cir_order_study",
]


def _cell_seed(base_seed: int, cell: int) -> int:
    """Derive a decorrelated 63-bit seed for study cell `cell`."""
    state = np.random.SeedSequence([base_seed, cell]).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


def fit_loglog(points) -> tuple[float, float, tuple[float, float]]:
    """Ordinary least squares on (log x, log y).

    Returns (slope, intercept, (ci_low, ci_high)) where the interval is the
    95% band from the t distribution with n - 2 degrees of freedom. Needs at
    least three points with positive values and non-degenerate x.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least three (x, y) points")
    if np.any(pts <= 0.0):
        raise ValueError("log-log fit needs strictly positive coordinates")
    lx = np.log(pts[:, 0])
    ly = np.log(pts[:, 1])
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    if sxx == 0.0:
        raise ValueError("degenerate x values: all equal")
    slope = float(np.sum((lx - lx.mean()) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * lx.mean())
    n = lx.size
    resid = ly - (intercept + slope * lx)
    se = math.sqrt(float(np.sum(resid**2)) / (n - 2) / sxx) if n > 2 else 0.0
    half = float(student_t.ppf(0.975, n - 2)) * se
    return slope, intercept, (slope - half, slope + half)


@dataclass(frozen=True)
class Cell:
    """One (resolution, seed) study cell."""

    resolution: int
    error: float
    seed: int
    wall_time_s: float


@dataclass(frozen=True)
class ConvergenceReport:
    """(resolution, error) points with a fitted log-log slope.

    ``slope`` is the raw OLS slope of log(error) against log(resolution),
    negative for a converging method; ``rate`` is its magnitude.
    """

    cells: tuple[Cell, ...]
    points: tuple[tuple[int, float], ...]
    slope: float
    intercept: float
    ci95: tuple[float, float]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.points) < 3:
            raise ValueError("a report needs at least three points")
        res = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(res, res[1:])):
            raise ValueError("resolutions must be strictly increasing")
        if any(p[1] <= 0.0 for p in self.points):
            raise ValueError("errors must be positive")

    @property
    def rate(self) -> float:
        return -self.slope

    @property
    def rate_ci95(self) -> tuple[float, float]:
        return (-self.ci95[1], -self.ci95[0])


def _build_report(cells: list[Cell], resolutions: list[int], metadata: dict) -> ConvergenceReport:
    points = []
    for r in resolutions:
        errs = [c.error for c in cells if c.resolution == r]
        points.append((r, float(np.mean(errs))))
    slope, intercept, ci = fit_loglog(points)
    return ConvergenceReport(
        cells=tuple(cells),
        points=tuple(points),
        slope=slope,
        intercept=intercept,
        ci95=ci,
        metadata=metadata,
    )


def _run_cells(fn, cells: list, threads: int) -> list:
    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, cells))
    return [fn(c) for c in cells]


# ---------------------------------------------------------------------------
# Strong convergence in time
# ---------------------------------------------------------------------------

def strong_convergence_study(
    config: SimConfig,
    m_list,
    m_ref: int,
    *,
    seeds: int = 5,
    metric: str = "sup",
    threads: int = 1,
) -> ConvergenceReport:
    """Coupled coarse-versus-reference error of the particle scheme in time.

    One fine increment block is generated per seed at ``m_ref`` steps; each
    coarse resolution runs on its exactly-summed coarsening, so all runs
    share the same Brownian paths. The error at resolution M is the RMS over
    particles of the sup (or terminal) log-spot difference at the M-grid
    nodes, averaged over seeds before fitting.
    """
    m_list = [int(m) for m in m_list]
    if len(m_list) < 3 or any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be at least three strictly increasing step counts")
    if any(m_ref % m != 0 for m in m_list):
        raise ValueError(f"every M in {m_list} must divide m_ref={m_ref}")
    if m_ref < 4 * max(m_list):
        raise ValueError(f"m_ref={m_ref} must be at least 4x the largest study resolution")
    if metric not in ("sup", "terminal"):
        raise ValueError(f"metric must be 'sup' or 'terminal', got {metric!r}")
    m_record = max(m_list)

    def run_seed(seed_index: int) -> list[Cell]:
        cell_seed = _cell_seed(config.seed, seed_index)
        ref_config = replace(config, n_steps=m_ref, seed=cell_seed)
        block = generate(ref_config.noise_plan())
        ref = simulate(ref_config, block=block, record_nodes=m_record)
        out = []
        for m in m_list:
            t0 = time.perf_counter()
            run = simulate(replace(config, n_steps=m, seed=cell_seed), block=coarsen(block, m_ref // m), record_nodes=m)
            ref_at_m = ref.path_x[:, :: m_record // m]
            diff = run.path_x - ref_at_m
            if metric == "sup":
                per_particle = np.max(np.abs(diff), axis=1)
            else:
                per_particle = np.abs(diff[:, -1])
            err = float(np.sqrt(np.mean(per_particle**2)))
            out.append(Cell(resolution=m, error=err, seed=seed_index, wall_time_s=time.perf_counter() - t0))
        return out

    t_start = time.perf_counter()
    cells = [c for group in _run_cells(run_seed, list(range(seeds)), threads) for c in group]
    meta = {
        "study": "strong-convergence",
        "metric": metric,
        "m_ref": m_ref,
        "seeds": seeds,
        "n_particles": config.n_particles,
        "feller": feller_ratio(config.params).nu,
        "wall_time_s": time.perf_counter() - t_start,
    }
    return _build_report(cells, m_list, meta)


# ---------------------------------------------------------------------------
# Interaction (donor-set) error versus particle count
# ---------------------------------------------------------------------------

def chaos_study(
    config: SimConfig,
    n_list,
    *,
    seeds: int = 5,
    threads: int = 1,
) -> ConvergenceReport:
    """Pathwise error between full-donor and half-donor leverage.

    For each N, 2N particles are simulated twice under identical increments:
    once with the leverage estimated from all 2N particles, once with it
    estimated from the first N only (all 2N still advanced). The error is
    the RMS terminal spot difference over all 2N particles.
    """
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be at least three strictly increasing particle counts")
    if any(n < 2 for n in n_list):
        raise ValueError("every N must be at least 2")

    grid = [(s, n) for s in range(seeds) for n in n_list]

    def run_cell(item) -> Cell:
        seed_index, n = item
        t0 = time.perf_counter()
        # One seed per seed index: particle streams depend only on (seed, i),
        # so runs at different N within a seed share their common prefix of
        # streams, coupling the whole resolution sweep.
        cell_seed = _cell_seed(config.seed, seed_index)
        cfg = replace(config, n_particles=2 * n, seed=cell_seed)
        block = generate(cfg.noise_plan())
        full = simulate(cfg, block=block)
        half = simulate(cfg, block=block, source_n=n)
        diff = np.exp(full.terminal.x) - np.exp(half.terminal.x)
        err = float(np.sqrt(np.mean(diff**2)))
        return Cell(resolution=n, error=err, seed=seed_index, wall_time_s=time.perf_counter() - t0)

    t_start = time.perf_counter()
    cells = _run_cells(run_cell, grid, threads)
    meta = {
        "study": "chaos",
        "seeds": seeds,
        "n_steps": config.n_steps,
        "feller": feller_ratio(config.params).nu,
        "wall_time_s": time.perf_counter() - t_start,
    }
    return _build_report(cells, n_list, meta)


# ---------------------------------------------------------------------------
# Variance scheme strong order
# ---------------------------------------------------------------------------

def cir_order_study(
    params: HestonParams,
    m_list,
    m_ref: int,
    *,
    n_paths: int = 10_000,
    horizon: float = 1.0,
    seeds: int = 1,
    base_seed: int = 0,
    warn=None,
) -> ConvergenceReport:
    """Coupled coarse-versus-fine terminal L2 error of the truncated Euler
    variance scheme.

    The fine increments stream through in chunks; each coarse resolution
    accumulates its merged increment on the fly, so memory stays bounded.
    Emits a warning (via ``warn``, default ``warnings.warn``) when the
    Feller ratio is 3 or below, where half-order convergence is not backed
    by theory.
    """
    import warnings as _warnings

    m_list = [int(m) for m in m_list]
    if len(m_list) < 3 or any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be at least three strictly increasing step counts")
    if any(m_ref % m != 0 for m in m_list):
        raise ValueError(f"every M in {m_list} must divide m_ref={m_ref}")
    info = feller_ratio(params)
    if not info.nu_gt_3:
        (warn or _warnings.warn)(
            f"Feller ratio {info.nu:.3g} <= 3: half-order variance convergence is not guaranteed"
        )

    dt_ref = horizon / m_ref
    cells: list[Cell] = []
    for seed_index in range(seeds):
        t0 = time.perf_counter()
        plan = NoisePlan(
            seed=_cell_seed(base_seed, seed_index),
            n_particles=n_paths,
            rho=params.rho,
            n_steps=m_ref,
            horizon=horizon,
        )
        v_ref = np.full(n_paths, params.v0)
        v_coarse = {m: np.full(n_paths, params.v0) for m in m_list}
        acc = {m: np.zeros(n_paths) for m in m_list}
        chunk_steps = max(m_ref // max(m_list), 1024)
        done = 0
        for chunk in iter_chunks(plan, chunk_steps):
            for j in range(chunk.n_steps):
                dwv = chunk.dwv[:, j]
                v_ref = fte_step(v_ref, dt_ref, params, dwv)
                done += 1
                for m in m_list:
                    acc[m] += dwv
                    window = m_ref // m
                    if done % window == 0:
                        v_coarse[m] = fte_step(v_coarse[m], horizon / m, params, acc[m])
                        acc[m][:] = 0.0
        wall = time.perf_counter() - t0
        for m in m_list:
            err = float(np.sqrt(np.mean((v_coarse[m] - v_ref) ** 2)))
            cells.append(Cell(resolution=m, error=err, seed=seed_index, wall_time_s=wall / len(m_list)))

    meta = {
        "study": "cir-order",
        "seeds": seeds,
        "n_paths": n_paths,
        "m_ref": m_ref,
        "feller": info.nu,
    }
    return _build_report(cells, m_list, meta)
