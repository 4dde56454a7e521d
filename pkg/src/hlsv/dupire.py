"""Synthetic market construction and Dupire local-volatility extraction.

The "market" is a grid of semi-closed-form Heston call prices (zero rates).
The local-vol surface is read off that grid by finite differences,
floored against vanishing butterflies, clamped to a positive band, and
interpolated by a slope-limited cubic in strike with linear time blending,
so that evaluation is bounded and Lipschitz in log-spot.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .cir import HestonParams
from .errors import ArbitrageError, QuadratureError

__all__ = [
    "CallGrid",
    "LocalVolSurface",
    "heston_call",
    "heston_put",
    "build_call_grid",
    "dupire_local_vol",
    "surface_eval",
    "reprice_grid_mc",
    "load_surface",
]

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Semi-closed-form Heston pricing (zero interest and dividend rates)
# ---------------------------------------------------------------------------

def _heston_cf(u, params: HestonParams, maturity: float):
    """Characteristic function of log-spot, in the branch-stable form that
    keeps the complex logarithm on its principal sheet for all maturities."""
    i = 1j
    b = params.kappa - params.rho * params.xi * i * u
    d = np.sqrt(b * b + params.xi**2 * (i * u + u * u))
    g = (b - d) / (b + d)
    edt = np.exp(-d * maturity)
    log_term = np.log((1.0 - g * edt) / (1.0 - g))
    c_term = (params.kappa * params.theta / params.xi**2) * ((b - d) * maturity - 2.0 * log_term)
    d_term = (b - d) / params.xi**2 * (1.0 - edt) / (1.0 - g * edt)
    return np.exp(c_term + d_term * params.v0 + i * u * math.log(params.s0))


def _gil_pelaez(params: HestonParams, maturity: float, strike: float, price_tol: float):
    """Return (P1, P2, achieved_error) from the two-term Fourier representation."""
    lnk = math.log(strike)
    s0 = params.s0

    def integrand_p1(u):
        return (np.exp(-1j * u * lnk) * _heston_cf(u - 1j, params, maturity) / (1j * u * s0)).real

    def integrand_p2(u):
        return (np.exp(-1j * u * lnk) * _heston_cf(u, params, maturity) / (1j * u)).real

    # The integrands decay like exp(-c*u); widen the window for short
    # maturities where the decay scale stretches.
    umax = max(400.0, 16.0 / math.sqrt(max(params.v0, params.theta) * maturity))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        i1, e1 = quad(integrand_p1, 0.0, umax, limit=400, epsabs=1e-11, epsrel=1e-11)
        i2, e2 = quad(integrand_p2, 0.0, umax, limit=400, epsabs=1e-11, epsrel=1e-11)
    achieved = (s0 * e1 + strike * e2) / math.pi
    if achieved > price_tol:
        raise QuadratureError(
            f"pricing quadrature reached error estimate {achieved:.3e} > tolerance {price_tol:.1e} "
            f"(maturity={maturity}, strike={strike})"
        )
    return 0.5 + i1 / math.pi, 0.5 + i2 / math.pi, achieved


def heston_call(params: HestonParams, maturity: float, strike: float, *, price_tol: float = 1e-8) -> float:
    """Undiscounted (zero-rate) European call price by Fourier inversion.

    Raises :class:`QuadratureError` with the achieved error estimate if the
    quadrature cannot certify accuracy below ``price_tol``.
    """
    if not maturity > 0.0:
        raise ValueError(f"maturity must be positive, got {maturity}")
    if not strike > 0.0:
        raise ValueError(f"strike must be positive, got {strike}")
    p1, p2, _ = _gil_pelaez(params, maturity, strike, price_tol)
    return params.s0 * p1 - strike * p2


def heston_put(params: HestonParams, maturity: float, strike: float, *, price_tol: float = 1e-8) -> float:
    """Undiscounted European put via the same transform as :func:`heston_call`."""
    if not maturity > 0.0:
        raise ValueError(f"maturity must be positive, got {maturity}")
    if not strike > 0.0:
        raise ValueError(f"strike must be positive, got {strike}")
    p1, p2, _ = _gil_pelaez(params, maturity, strike, price_tol)
    return strike * (1.0 - p2) - params.s0 * (1.0 - p1)


# ---------------------------------------------------------------------------
# Call grid
# ---------------------------------------------------------------------------

def _butterflies(strikes: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Dupire denominators (K^2/2) * d2C/dK2 per node, one-sided at the edges."""
    h = np.diff(strikes)
    slopes = np.diff(row) / h
    d2 = np.empty_like(row)
    d2[1:-1] = 2.0 * (slopes[1:] - slopes[:-1]) / (h[1:] + h[:-1])
    d2[0] = d2[1]
    d2[-1] = d2[-2]
    return 0.5 * strikes * strikes * d2


@dataclass(frozen=True)
class CallGrid:
    """Call prices C(T, K) on an ascending maturity x strike grid, zero rates.

    Invariants: rows are non-increasing and convex in strike (butterfly
    denominator above ``-tol_butterfly``) and bounded by the intrinsic value
    below and the spot above.
    """

    maturities: NDArray[np.float64]
    strikes: NDArray[np.float64]
    prices: NDArray[np.float64]
    s0: float

    def __post_init__(self) -> None:
        if self.prices.shape != (self.maturities.size, self.strikes.size):
            raise ValueError("prices must have shape (n_maturities, n_strikes)")
        for arr in (self.maturities, self.strikes, self.prices):
            arr.setflags(write=False)


def _project_convex(strikes: np.ndarray, row: np.ndarray, tol_butterfly: float) -> tuple[np.ndarray, int]:
    """One left-to-right pass pulling violating nodes down onto the chord of
    their neighbours; returns the repaired row and the number of nodes moved."""
    out = row.copy()
    repaired = 0
    for i in range(1, out.size - 1):
        h_l = strikes[i] - strikes[i - 1]
        h_r = strikes[i + 1] - strikes[i]
        chord = (h_r * out[i - 1] + h_l * out[i + 1]) / (h_l + h_r)
        denom = 0.5 * strikes[i] ** 2 * 2.0 * (chord - out[i]) / (h_l * h_r)
        if denom < -tol_butterfly:
            out[i] = chord
            repaired += 1
    return out, repaired


def build_call_grid(
    params: HestonParams,
    maturities,
    strikes,
    *,
    tol_butterfly: float | None = None,
    strike_band: tuple[float, float] = (0.5, 2.0),
    min_maturity: float = 0.1,
    price_tol: float = 1e-8,
) -> CallGrid:
    """Price every (maturity, strike) node and validate static no-arbitrage.

    Convexity violations beyond ``tol_butterfly`` (default ``1e-8 * s0^2``)
    are repaired by a single convexity projection pass and logged; anything
    still violating afterwards raises :class:`ArbitrageError`.
    """
    maturities = np.asarray(maturities, dtype=float)
    strikes = np.asarray(strikes, dtype=float)
    if strikes.size == 0:
        raise ValueError("strike grid is empty")
    if maturities.size == 0:
        raise ValueError("maturity grid is empty")
    if np.any(np.diff(maturities) <= 0.0) or np.any(np.diff(strikes) <= 0.0):
        raise ValueError("maturities and strikes must be strictly ascending")
    lo, hi = strike_band[0] * params.s0, strike_band[1] * params.s0
    if strikes[0] < lo or strikes[-1] > hi:
        raise ValueError(f"strikes must lie within the liquidity band [{lo}, {hi}]")
    if maturities[0] < min_maturity:
        raise ValueError(f"maturities must start at or above {min_maturity}")
    if tol_butterfly is None:
        tol_butterfly = 1e-8 * params.s0**2

    prices = np.empty((maturities.size, strikes.size))
    for i, t in enumerate(maturities):
        for j, k in enumerate(strikes):
            prices[i, j] = heston_call(params, t, k, price_tol=price_tol)

    bound_tol = 1e-6 * params.s0
    intrinsic = np.maximum(params.s0 - strikes, 0.0)
    if np.any(prices < intrinsic[None, :] - bound_tol) or np.any(prices > params.s0 + bound_tol):
        raise ArbitrageError("call prices violate intrinsic/spot bounds")
    if np.any(np.diff(prices, axis=1) > bound_tol):
        raise ArbitrageError("call prices increase in strike")

    total_repaired = 0
    for i in range(maturities.size):
        if np.min(_butterflies(strikes, prices[i])[1:-1]) < -tol_butterfly:
            repaired_row, n_rep = _project_convex(strikes, prices[i], tol_butterfly)
            prices[i] = repaired_row
            total_repaired += n_rep
            if np.min(_butterflies(strikes, prices[i])[1:-1]) < -tol_butterfly:
                raise ArbitrageError(
                    f"convexity violation at maturity {maturities[i]} not repairable in one pass"
                )
    if total_repaired:
        logger.info("convexity projection adjusted %d grid nodes", total_repaired)
    return CallGrid(maturities=maturities, strikes=strikes, prices=prices, s0=params.s0)


# ---------------------------------------------------------------------------
# Local-volatility surface
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalVolSurface:
    """Gridded local volatility with clamped, slope-limited evaluation.

    Strike interpolation is a shape-preserving cubic whose node slopes are
    capped so that the surface stays Lipschitz in log-spot; time blending is
    linear; extrapolation is flat on both axes; every evaluated value lies in
    ``[sigma_lo, sigma_hi]``.
    """

    maturities: NDArray[np.float64]
    strikes: NDArray[np.float64]
    sigma: NDArray[np.float64]
    sigma_lo: float
    sigma_hi: float
    lipschitz_cap: float
    interpolation: str = "pchip-linear"
    diagnostics: dict = field(default_factory=dict)
    _rows: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 < self.sigma_lo < self.sigma_hi:
            raise ValueError("need 0 < sigma_lo < sigma_hi")
        if self.sigma.shape != (self.maturities.size, self.strikes.size):
            raise ValueError("sigma must have shape (n_maturities, n_strikes)")
        for arr in (self.maturities, self.strikes, self.sigma):
            arr.setflags(write=False)
        object.__setattr__(self, "_rows", tuple(self._build_row(i) for i in range(self.maturities.size)))

    def _build_row(self, i: int):
        k = self.strikes
        y = self.sigma[i]
        if k.size == 1 or self.interpolation == "linear":
            return None
        # Shape-preserving slopes, then cap |d sigma/d x| = K |d sigma/dK|.
        d = PchipInterpolator(k, y).derivative()(k)
        cap = self.lipschitz_cap / k
        return CubicHermiteSpline(k, y, np.clip(d, -cap, cap))

    def _eval_row(self, i: int, k: np.ndarray) -> np.ndarray:
        if self._rows[i] is None:
            if self.strikes.size == 1:
                return np.full_like(k, self.sigma[i, 0])
            return np.interp(k, self.strikes, self.sigma[i])
        return self._rows[i](k)

    def eval_strike(self, t: float, strike) -> np.ndarray | float:
        """Evaluate at strike coordinates (flat beyond the grid, clamped)."""
        k = np.clip(np.asarray(strike, dtype=float), self.strikes[0], self.strikes[-1])
        times = self.maturities
        if t <= times[0]:
            val = self._eval_row(0, k)
        elif t >= times[-1]:
            val = self._eval_row(times.size - 1, k)
        else:
            i = int(np.searchsorted(times, t, side="right") - 1)
            w = (t - times[i]) / (times[i + 1] - times[i])
            val = (1.0 - w) * self._eval_row(i, k) + w * self._eval_row(i + 1, k)
        val = np.clip(val, self.sigma_lo, self.sigma_hi)
        return val if val.ndim else float(val)

    def __call__(self, t: float, x) -> np.ndarray | float:
        return surface_eval(self, t, x)


def surface_eval(surface: LocalVolSurface, t: float, x) -> np.ndarray | float:
    """Local volatility at time ``t`` and log-spot ``x`` (i.e. strike e^x)."""
    return surface.eval_strike(t, np.exp(np.asarray(x, dtype=float)))


def dupire_local_vol(
    grid: CallGrid,
    *,
    sigma_lo: float = 0.01,
    sigma_hi: float = 5.0,
    lipschitz_cap: float = 10.0,
    tol_butterfly: float | None = None,
    calendar_tol: float | None = None,
) -> LocalVolSurface:
    """Extract sigma(T, K) = sqrt(dC/dT / ((K^2/2) d2C/dK2)) from a grid.

    Central differences on interior nodes, one-sided at edges. The butterfly
    denominator is floored at ``tol_butterfly``; negative calendar numerators
    beyond ``calendar_tol`` are flagged, zeroed and counted; node values are
    clamped to ``[sigma_lo, sigma_hi]``.
    """
    if tol_butterfly is None:
        tol_butterfly = 1e-8 * grid.s0**2
    if calendar_tol is None:
        calendar_tol = 1e-8 * grid.s0
    times = grid.maturities
    prices = grid.prices

    # dC/dT, non-uniform central stencil inside, one-sided at the ends.
    dct = np.empty_like(prices)
    if times.size == 1:
        raise ValueError("need at least two maturities to difference in time")
    dct[0] = (prices[1] - prices[0]) / (times[1] - times[0])
    dct[-1] = (prices[-1] - prices[-2]) / (times[-1] - times[-2])
    for i in range(1, times.size - 1):
        h_l = times[i] - times[i - 1]
        h_r = times[i + 1] - times[i]
        dct[i] = (
            h_l * h_l * prices[i + 1]
            + (h_r * h_r - h_l * h_l) * prices[i]
            - h_r * h_r * prices[i - 1]
        ) / (h_l * h_r * (h_l + h_r))

    denom = np.vstack([_butterflies(grid.strikes, prices[i]) for i in range(times.size)])
    floored = int(np.sum(denom < tol_butterfly))
    denom = np.maximum(denom, tol_butterfly)

    calendar_flags = int(np.sum(dct < -calendar_tol))
    numer = np.maximum(dct, 0.0)

    raw = np.sqrt(numer / denom)
    clamped = int(np.sum((raw < sigma_lo) | (raw > sigma_hi)))
    sigma = np.clip(raw, sigma_lo, sigma_hi)

    if calendar_flags:
        logger.info("calendar-arbitrage numerators flagged at %d nodes", calendar_flags)
    return LocalVolSurface(
        maturities=times.copy(),
        strikes=grid.strikes.copy(),
        sigma=sigma,
        sigma_lo=sigma_lo,
        sigma_hi=sigma_hi,
        lipschitz_cap=lipschitz_cap,
        diagnostics={
            "floored_denominators": floored,
            "calendar_flags": calendar_flags,
            "clamped_nodes": clamped,
            "tol_butterfly": tol_butterfly,
        },
    )


def load_surface(
    maturities,
    strikes,
    sigma,
    *,
    sigma_lo: float = 0.01,
    sigma_hi: float = 5.0,
    lipschitz_cap: float = 10.0,
) -> LocalVolSurface:
    """Assemble a surface from externally stored node values."""
    return LocalVolSurface(
        maturities=np.asarray(maturities, dtype=float).copy(),
        strikes=np.asarray(strikes, dtype=float).copy(),
        sigma=np.asarray(sigma, dtype=float).copy(),
        sigma_lo=sigma_lo,
        sigma_hi=sigma_hi,
        lipschitz_cap=lipschitz_cap,
    )


# ---------------------------------------------------------------------------
# Pure local-vol Monte Carlo (extraction round-trip oracle)
# ---------------------------------------------------------------------------

def reprice_grid_mc(
    surface: LocalVolSurface,
    s0: float,
    maturities,
    strikes,
    *,
    n_paths: int = 100_000,
    n_steps: int = 200,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Price grid calls under pure local-vol dynamics dS = sigma(t, S) S dW.

    Independent of the particle machinery: plain log-Euler with its own RNG.
    Returns (prices, standard_errors), each shaped (n_maturities, n_strikes).
    """
    maturities = np.asarray(maturities, dtype=float)
    strikes = np.asarray(strikes, dtype=float)
    rng = np.random.default_rng(seed)
    x = np.full(n_paths, math.log(s0))
    prices = np.empty((maturities.size, strikes.size))
    ses = np.empty_like(prices)
    t = 0.0
    horizon = maturities[-1]
    for j, t_next in enumerate(maturities):
        steps = max(1, int(round(n_steps * (t_next - t) / horizon)))
        dt = (t_next - t) / steps
        for _ in range(steps):
            sig = surface.eval_strike(t, np.exp(x))
            x += -0.5 * sig * sig * dt + sig * math.sqrt(dt) * rng.standard_normal(n_paths)
            t += dt
        t = t_next
        s = np.exp(x)
        for i, k in enumerate(strikes):
            pay = np.maximum(s - k, 0.0)
            prices[j, i] = pay.mean()
            ses[j, i] = pay.std(ddof=1) / math.sqrt(n_paths)
    return prices, ses
