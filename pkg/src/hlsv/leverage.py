"""Regularised Nadaraya-Watson estimation of E[V | X] and the resulting
leverage coefficients of the interacting particle system.

The estimator is the ratio of kernel-weighted sums (or empirical means)
with a floor ``delta`` added to numerator and denominator, which keeps it
total and bounds it away from zero and infinity. All reductions run
sequentially over a canonical value-sorted ordering of the donor particles,
so results are bit-identical under particle relabelling, between the dense
and windowed paths, and independent of worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.typing import NDArray

__all__ = [
    "KernelSpec",
    "Regularisation",
    "make_kernel",
    "bandwidth_value",
    "kernel_eval",
    "nw_ratio",
    "leverage_coeffs",
    "leverage_all",
    "sigma_tilde_max",
]

_FAMILIES = ("quartic", "epanechnikov", "gaussian")
_FAMILY_CODE = {"quartic": 0, "epanechnikov": 1, "gaussian": 2}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family with bandwidth and its sup/Lipschitz constants.

    ``a2`` bounds the kernel and ``lipschitz`` bounds the slope of
    u -> K(u); both enter the ratio bounds of the estimator.
    """

    family: str
    bandwidth: float
    a2: float
    lipschitz: float

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}, expected one of {_FAMILIES}")
        if not self.bandwidth > 0.0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def compact_support(self) -> bool:
        return self.family != "gaussian"


def make_kernel(family: str, bandwidth: float) -> KernelSpec:
    """Build a KernelSpec carrying the family's sup bound and Lipschitz constant."""
    consts = {
        "quartic": (15.0 / 16.0, 5.0 * math.sqrt(3.0) / 6.0),
        "epanechnikov": (0.75, 1.5),
        # sup of the normal pdf and sup of |pdf'| (attained at |u| = 1)
        "gaussian": (1.0 / math.sqrt(2.0 * math.pi), math.exp(-0.5) / math.sqrt(2.0 * math.pi)),
    }
    if family not in consts:
        raise ValueError(f"unknown kernel family {family!r}, expected one of {_FAMILIES}")
    a2, lip = consts[family]
    return KernelSpec(family=family, bandwidth=bandwidth, a2=a2, lipschitz=lip)


def bandwidth_value(rule: str, s0: float, n_particles: int, fixed: float | None = None) -> float:
    """Resolve a bandwidth rule: ``silverman_like`` gives s0 * N^(-1/5),
    ``fixed`` returns the supplied value."""
    if rule == "silverman_like":
        return s0 * n_particles ** (-0.2)
    if rule == "fixed":
        if fixed is None or not fixed > 0.0:
            raise ValueError("fixed bandwidth rule needs a positive value")
        return float(fixed)
    raise ValueError(f"unknown bandwidth rule {rule!r}")


@dataclass(frozen=True)
class Regularisation:
    """Estimator regularisation: bandwidth, singularity floor, argument space.

    ``space`` selects whether kernel arguments are spot differences
    (S_j - S_i)/eps or log-spot differences (X_j - X_i)/eps. ``raw_sums``
    keeps the kernel-weighted raw sums of the interacting system (default,
    under which the floor's effect shrinks like 1/N); switching it off uses
    empirical means, the convention of the infinite-particle limit, which
    rescales the floor's effect by N.
    """

    epsilon: float
    delta: float
    space: str = "spot"
    raw_sums: bool = True

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.delta > 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.space not in ("spot", "log"):
            raise ValueError(f"space must be 'spot' or 'log', got {self.space!r}")


def kernel_eval(spec: KernelSpec, u) -> NDArray[np.float64] | float:
    """Evaluate the kernel at (already scaled) argument u.

    quartic: (15/16)(1-u^2)^2 on |u| <= 1; epanechnikov: (3/4)(1-u^2) on
    |u| <= 1; gaussian: the standard normal density. Compact-support
    families return exactly 0.0 outside their support.
    """
    u = np.asarray(u, dtype=float)
    if spec.family == "quartic":
        w = np.maximum(1.0 - u * u, 0.0)
        out = (15.0 / 16.0) * (w * w)
    elif spec.family == "epanechnikov":
        out = 0.75 * np.maximum(1.0 - u * u, 0.0)
    else:
        out = np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
    return out if out.ndim else float(out)


def sigma_tilde_max(sigma_hi: float, spec: KernelSpec, reg: Regularisation) -> float:
    """Mean-convention bound on the leverage multiplier:
    sigma_hi * sqrt((A2 + delta)/delta)."""
    return sigma_hi * math.sqrt((spec.a2 + reg.delta) / reg.delta)


@njit(cache=True, nogil=True)
def _nw_sums(
    coords_sorted: np.ndarray,
    v_sorted: np.ndarray,
    targets: np.ndarray,
    inv_eps: float,
    lo: np.ndarray,
    hi: np.ndarray,
    family: int,
    out_k: np.ndarray,
    out_vk: np.ndarray,
) -> None:
    """Kernel-weighted sums per target, accumulated in sorted donor order.

    Zero-weight donors contribute nothing whether visited or skipped, so
    window bounds never change the result bits.
    """
    inv_sqrt_2pi = 0.3989422804014327
    for r in range(targets.size):
        acc_k = 0.0
        acc_vk = 0.0
        x = targets[r]
        for j in range(lo[r], hi[r]):
            u = (coords_sorted[j] - x) * inv_eps
            if family == 2:
                w = math.exp(-0.5 * u * u) * inv_sqrt_2pi
            else:
                w = 1.0 - u * u
                if w <= 0.0:
                    continue
                w = 0.9375 * (w * w) if family == 0 else 0.75 * w
            acc_k += w
            acc_vk += w * v_sorted[j]
        out_k[r] = acc_k
        out_vk[r] = acc_vk


def _sorted_donors(coords: np.ndarray, v_plus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((v_plus, coords))
    return np.ascontiguousarray(coords[order]), np.ascontiguousarray(v_plus[order])


def _windows(cs: np.ndarray, targets: np.ndarray, eps: float, spec: KernelSpec, use_window: bool):
    n = cs.size
    if use_window and spec.compact_support:
        lo = np.searchsorted(cs, targets - eps, side="left").astype(np.int64)
        hi = np.searchsorted(cs, targets + eps, side="right").astype(np.int64)
    else:
        lo = np.zeros(targets.size, dtype=np.int64)
        hi = np.full(targets.size, n, dtype=np.int64)
    return lo, hi


def _ratio_from_sums(m_k: np.ndarray, m_vk: np.ndarray, n_donors: int, reg: Regularisation):
    if not reg.raw_sums:
        m_k = m_k / n_donors
        m_vk = m_vk / n_donors
    return (m_k + reg.delta) / (m_vk + reg.delta)


def nw_ratio(x: float, donors, donor_v, spec: KernelSpec, reg: Regularisation) -> float:
    """Squared leverage ratio r = (m_K + delta) / (m_VK + delta) at point x.

    ``donors`` are coordinates in the regularisation's argument space and
    ``donor_v`` the matching (nonnegative) variance samples; ``m_K`` and
    ``m_VK`` are their kernel-weighted raw sums, or empirical means when
    ``reg.raw_sums`` is off. With all kernel weights zero the floor makes
    r = 1 exactly. In the means convention r always lies in
    [delta/(max V * A2 + delta), (A2 + delta)/delta].
    """
    donors = np.asarray(donors, dtype=float)
    donor_v = np.asarray(donor_v, dtype=float)
    if donors.size == 0 or donors.shape != donor_v.shape or donors.ndim != 1:
        raise ValueError("donors and donor_v must be equal-length nonempty 1-D arrays")
    cs, vs = _sorted_donors(donors, donor_v)
    targets = np.asarray([float(x)])
    lo, hi = _windows(cs, targets, reg.epsilon, spec, use_window=True)
    m_k = np.empty(1)
    m_vk = np.empty(1)
    _nw_sums(cs, vs, targets, 1.0 / reg.epsilon, lo, hi, _FAMILY_CODE[spec.family], m_k, m_vk)
    return float(_ratio_from_sums(m_k, m_vk, donors.size, reg)[0])


def leverage_coeffs(
    t: float, x: float, v: float, ensemble, surface, spec: KernelSpec, reg: Regularisation
) -> tuple[float, float]:
    """Leverage diffusion and drift at one state against an ensemble.

    sigma = sqrt(v) * sigma_dup(t, e^x) * sqrt(r); beta = -sigma^2 / 2,
    computed from sigma so the drift identity holds to one rounding.
    """
    if v < 0.0:
        raise ValueError(f"v must be nonnegative, got {v}")
    donors = np.exp(ensemble.x) if reg.space == "spot" else ensemble.x
    point = math.exp(x) if reg.space == "spot" else x
    r = nw_ratio(point, donors, ensemble.v_plus, spec, reg)
    sig_dup = float(surface(t, x))
    sigma = math.sqrt(v) * sig_dup * math.sqrt(r)
    return sigma, -0.5 * sigma * sigma


def leverage_all(
    ensemble,
    surface,
    spec: KernelSpec,
    reg: Regularisation,
    t: float,
    *,
    source_n: int | None = None,
    use_window: bool = True,
    block_rows: int = 2048,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Leverage coefficients for every particle against the (frozen) ensemble.

    ``source_n`` restricts the donor set to the first ``source_n`` particles
    while still evaluating at all of them; the self term is included
    whenever the target is a donor. ``use_window=False`` forces the full
    O(N^2) reference sweep; the default windowed sweep for compact-support
    kernels skips donors outside each target's +-epsilon window, whose
    weights are exactly zero, so both paths return identical bits.

    Returns (sigma, beta) arrays with beta = -sigma^2/2 entrywise.
    """
    x = ensemble.x
    v_plus = ensemble.v_plus
    n_all = x.size
    n_src = n_all if source_n is None else int(source_n)
    if not 1 <= n_src <= n_all:
        raise ValueError(f"source_n must be in [1, {n_all}], got {source_n}")

    coords = np.exp(x) if reg.space == "spot" else x
    cs, vs = _sorted_donors(coords[:n_src], v_plus[:n_src])
    lo, hi = _windows(cs, coords, reg.epsilon, spec, use_window)
    inv_eps = 1.0 / reg.epsilon
    family = _FAMILY_CODE[spec.family]
    m_k = np.empty(n_all)
    m_vk = np.empty(n_all)

    blocks = [(a, min(a + block_rows, n_all)) for a in range(0, n_all, block_rows)]
    if threads > 1 and len(blocks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        def run_block(ab):
            a, b = ab
            _nw_sums(cs, vs, coords[a:b], inv_eps, lo[a:b], hi[a:b], family, m_k[a:b], m_vk[a:b])

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, blocks))
    else:
        _nw_sums(cs, vs, coords, inv_eps, lo, hi, family, m_k, m_vk)

    ratio = _ratio_from_sums(m_k, m_vk, n_src, reg)
    sig_dup = np.asarray(surface(t, x), dtype=float)
    sigma = np.sqrt(v_plus) * sig_dup * np.sqrt(ratio)
    beta = -0.5 * sigma * sigma
    return sigma, beta
