"""Deterministic generation of correlated Brownian increments.

Every particle owns an independent counter-based substream addressed by
(seed, particle index), so blocks are reproducible bit-for-bit regardless
of generation order or worker count, and coarse time grids are obtained by
exactly summing fine increments (common random numbers across resolutions).
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.typing import NDArray

__all__ = ["NoisePlan", "IncrementBlock", "generate", "iter_chunks", "coarsen", "dump_block", "load_block"]

_HEADER = struct.Struct("<qqqdd")  # seed, n_particles, n_steps, horizon, rho


@dataclass(frozen=True)
class NoisePlan:
    """Recipe for one block of correlated increments.

    Attributes
    ----------
    seed : int
        Master seed; particle ``i`` draws from a substream keyed by
        ``(seed, i)`` only.
    n_particles : int
        Number of rows (independent substreams).
    rho : float
        Instantaneous correlation between the two driving motions,
        strictly inside (-1, 1).
    n_steps : int
        Number of uniform steps on the base grid.
    horizon : float
        Total time covered, so each step has width ``horizon / n_steps``.
    """

    seed: int
    n_particles: int
    rho: float
    n_steps: int
    horizon: float

    def __post_init__(self) -> None:
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie strictly inside (-1, 1), got {self.rho}")
        if self.n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {self.n_particles}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


@dataclass(frozen=True)
class IncrementBlock:
    """Correlated increment arrays, shape (n_particles, n_steps), both read-only.

    Each entry is marginally N(0, dt); rows i of ``dwx`` and ``dwv`` have
    correlation rho by the Cholesky relation dwv = rho*dwx + sqrt(1-rho^2)*dw_perp.
    """

    dwx: NDArray[np.float64]
    dwv: NDArray[np.float64]
    dt: float

    def __post_init__(self) -> None:
        if self.dwx.shape != self.dwv.shape or self.dwx.ndim != 2:
            raise ValueError("dwx and dwv must be 2-D arrays of identical shape")
        self.dwx.setflags(write=False)
        self.dwv.setflags(write=False)

    @property
    def n_particles(self) -> int:
        return self.dwx.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dwx.shape[1]

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps


def _stream(seed: int, particle: int) -> np.random.Generator:
    # Philox is counter-based: the stream for (seed, i) never depends on
    # which other streams were drawn, or in what order.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, particle])))


def _fill_rows(plan: NoisePlan, dwx: np.ndarray, dwv: np.ndarray, lo: int, hi: int) -> None:
    sqrt_dt = np.sqrt(plan.dt)
    comp = np.sqrt(1.0 - plan.rho * plan.rho)
    for i in range(lo, hi):
        # (n_steps, 2) draw: per step one normal for dwx, one for the
        # orthogonal component, in step order (chunked draws concatenate
        # bit-identically).
        z = _stream(plan.seed, i).standard_normal((plan.n_steps, 2))
        dwx[i] = sqrt_dt * z[:, 0]
        dwv[i] = plan.rho * dwx[i] + (comp * sqrt_dt) * z[:, 1]


def generate(plan: NoisePlan, threads: int = 1) -> IncrementBlock:
    """Generate the full increment block for `plan`.

    Output is a pure function of the plan: any ``threads`` value produces
    bit-identical arrays because rows are written by index from
    per-particle substreams.
    """
    dwx = np.empty((plan.n_particles, plan.n_steps))
    dwv = np.empty((plan.n_particles, plan.n_steps))
    if threads <= 1 or plan.n_particles < 2 * threads:
        _fill_rows(plan, dwx, dwv, 0, plan.n_particles)
    else:
        bounds = np.linspace(0, plan.n_particles, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [
                pool.submit(_fill_rows, plan, dwx, dwv, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:])
            ]
            for f in futs:
                f.result()
    return IncrementBlock(dwx=dwx, dwv=dwv, dt=plan.dt)


def iter_chunks(plan: NoisePlan, max_steps: int) -> Iterator[IncrementBlock]:
    """Stream the plan's increments in step-windows of at most `max_steps`.

    Concatenating the yielded blocks along the step axis reproduces
    ``generate(plan)`` bit-for-bit; memory stays bounded by
    ``n_particles * max_steps`` per channel.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    streams = [_stream(plan.seed, i) for i in range(plan.n_particles)]
    sqrt_dt = np.sqrt(plan.dt)
    comp = np.sqrt(1.0 - plan.rho * plan.rho)
    done = 0
    while done < plan.n_steps:
        width = min(max_steps, plan.n_steps - done)
        dwx = np.empty((plan.n_particles, width))
        dwv = np.empty((plan.n_particles, width))
        for i, stream in enumerate(streams):
            z = stream.standard_normal((width, 2))
            dwx[i] = sqrt_dt * z[:, 0]
            dwv[i] = plan.rho * dwx[i] + (comp * sqrt_dt) * z[:, 1]
        done += width
        yield IncrementBlock(dwx=dwx, dwv=dwv, dt=plan.dt)


def _merge(arr: np.ndarray, factor: int) -> np.ndarray:
    """Sum groups of `factor` adjacent columns.

    The 2-adic part of the factor is applied as repeated pairwise halving,
    any odd remainder as a left-to-right group sum. Halving first makes
    power-of-two refinement chains telescope exactly:
    coarsen(coarsen(b, 2), 2) and coarsen(b, 4) are bit-identical.
    """
    out = arr
    while factor % 2 == 0:
        out = out[:, 0::2] + out[:, 1::2]
        factor //= 2
    if factor > 1:
        acc = out[:, 0::factor].copy()
        for j in range(1, factor):
            acc += out[:, j::factor]
        out = acc
    return np.ascontiguousarray(out)


def coarsen(block: IncrementBlock, factor: int) -> IncrementBlock:
    """Merge every `factor` consecutive increments into one coarse increment.

    The coarse increment over a merged window equals the exact sum of its
    fine sub-increments, so coarse and fine grids are driven by the same
    Brownian paths. Correlation is preserved exactly because the merge is
    linear. ``factor`` must divide the number of steps.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if block.n_steps % factor != 0:
        raise ValueError(f"factor {factor} does not divide n_steps {block.n_steps}")
    if factor == 1:
        return block
    return IncrementBlock(
        dwx=_merge(block.dwx, factor),
        dwv=_merge(block.dwv, factor),
        dt=block.dt * factor,
    )


def dump_block(plan: NoisePlan, block: IncrementBlock, path: str) -> None:
    """Write a debug dump: little-endian header (seed, N, M, T, rho), then
    the dwx and dwv arrays as row-major doubles."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(plan.seed, block.n_particles, block.n_steps, block.horizon, plan.rho))
        fh.write(np.ascontiguousarray(block.dwx).tobytes())
        fh.write(np.ascontiguousarray(block.dwv).tobytes())


def load_block(path: str) -> tuple[NoisePlan, IncrementBlock]:
    """Read a dump written by :func:`dump_block`."""
    with open(path, "rb") as fh:
        seed, n, m, horizon, rho = _HEADER.unpack(fh.read(_HEADER.size))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != 2 * n * m:
        raise ValueError(f"dump holds {raw.size} doubles, expected {2 * n * m}")
    plan = NoisePlan(seed=seed, n_particles=n, rho=rho, n_steps=m, horizon=horizon)
    dwx = raw[: n * m].reshape(n, m).copy()
    dwv = raw[n * m :].reshape(n, m).copy()
    return plan, IncrementBlock(dwx=dwx, dwv=dwv, dt=horizon / m)
