"""CIR variance process: parameters, Feller diagnostics, the critical horizon
for exponential integrability, and the full-truncation Euler step."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HestonParams",
    "FellerInfo",
    "CriticalTime",
    "NU_STAR",
    "feller_ratio",
    "critical_time",
    "fte_step",
    "cir_mean",
    "fte_paths",
]

NU_STAR = 2.0 + math.sqrt(3.0)


@dataclass(frozen=True)
class HestonParams:
    """CIR/Heston parameters with initial state and spot-variance correlation.

    Attributes
    ----------
    kappa : float
        Mean-reversion rate of the variance (1/time).
    theta : float
        Long-run variance level.
    xi : float
        Volatility of variance.
    rho : float
        Correlation between the spot and variance drivers, in (-1, 1).
    v0 : float
        Initial variance.
    s0 : float
        Initial spot; the log-spot start is ``x0 = ln(s0)``.
    """

    kappa: float
    theta: float
    xi: float
    rho: float
    v0: float
    s0: float

    def __post_init__(self) -> None:
        for name in ("kappa", "theta", "xi", "v0", "s0"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie strictly inside (-1, 1), got {self.rho}")

    @property
    def x0(self) -> float:
        return math.log(self.s0)


@dataclass(frozen=True)
class FellerInfo:
    """Feller ratio nu = 2*kappa*theta/xi^2 and the regime flags it implies."""

    nu: float
    nu_star: float
    nu_ge_1: bool
    nu_gt_3: bool
    nu_gt_star: bool


def feller_ratio(params: HestonParams) -> FellerInfo:
    """Compute the Feller ratio and regime flags for `params`.

    nu >= 1 gives strictly positive variance paths; nu > 3 is the
    hypothesis for half-order strong convergence of the truncated Euler
    variance scheme; nu > 2 + sqrt(3) for the log-spot scheme.
    """
    nu = 2.0 * params.kappa * params.theta / (params.xi * params.xi)
    return FellerInfo(
        nu=nu,
        nu_star=NU_STAR,
        nu_ge_1=nu >= 1.0,
        nu_gt_3=nu > 3.0,
        nu_gt_star=nu > NU_STAR,
    )


@dataclass(frozen=True)
class CriticalTime:
    """Extended-real horizon: ``value`` is None exactly when unbounded."""

    finite: bool
    value: float | None

    def as_float(self) -> float:
        return self.value if self.finite else math.inf

    def __str__(self) -> str:
        return f"{self.value:.6g}" if self.finite else "inf"


def critical_time(params: HestonParams, lam: float) -> CriticalTime:
    """Horizon below which exp(lam * integral of V) has finite expectation.

    Equals ``2/sqrt(2*lam*xi^2 - kappa^2) * (pi/2 + atan(kappa/sqrt(...)))``
    when ``kappa^2 < 2*lam*xi^2`` and is unbounded otherwise; this is the
    blow-up time of the associated Riccati equation
    ``u' = (xi^2/2) u^2 - kappa u + lam, u(0) = 0``.
    """
    if not lam > 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    disc = 2.0 * lam * params.xi * params.xi - params.kappa * params.kappa
    if disc <= 0.0:
        return CriticalTime(finite=False, value=None)
    root = math.sqrt(disc)
    value = (2.0 / root) * (math.pi / 2.0 + math.atan(params.kappa / root))
    return CriticalTime(finite=True, value=value)


def fte_step(v, dt: float, params: HestonParams, dwv):
    """One full-truncation Euler step of the variance channel.

    Drift and diffusion read the truncated state ``max(v, 0)``, so the
    square-root argument is never negative even though the raw state may
    be. Accepts scalars or arrays.
    """
    v = np.asarray(v, dtype=float)
    vplus = np.maximum(v, 0.0)
    out = v + params.kappa * (params.theta - vplus) * dt + params.xi * np.sqrt(vplus) * np.asarray(dwv)
    return out if out.ndim else float(out)


def cir_mean(params: HestonParams, t: float) -> float:
    """Conditional mean of the exact CIR process started at v0:
    theta + (v0 - theta) * exp(-kappa * t)."""
    if t < 0.0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return params.theta + (params.v0 - params.theta) * math.exp(-params.kappa * t)


def fte_paths(params: HestonParams, dwv: np.ndarray, dt: float, record: bool = False) -> np.ndarray:
    """Run the truncated Euler variance scheme over a whole increment array.

    Parameters
    ----------
    dwv : (n_paths, n_steps) array
    record : bool
        When True return the raw state at every node, shape
        (n_paths, n_steps + 1); otherwise just the terminal raw state.
    """
    n_paths, n_steps = dwv.shape
    v = np.full(n_paths, params.v0)
    if record:
        path = np.empty((n_paths, n_steps + 1))
        path[:, 0] = v
    for m in range(n_steps):
        v = fte_step(v, dt, params, dwv[:, m])
        if record:
            path[:, m + 1] = v
    return path if record else v
