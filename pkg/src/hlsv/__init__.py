"""Particle Monte Carlo for the calibrated Heston-type local stochastic
volatility model: synthetic market construction, Dupire surface extraction,
kernel-regularised interacting particle simulation, and convergence studies.
"""

from .cir import CriticalTime, FellerInfo, HestonParams, cir_mean, critical_time, feller_ratio, fte_step
from .dupire import (
    CallGrid,
    LocalVolSurface,
    build_call_grid,
    dupire_local_vol,
    heston_call,
    heston_put,
    surface_eval,
)
from .errors import ArbitrageError, ConfigError, NumericalError, QuadratureError
from .experiments import ConvergenceReport, chaos_study, cir_order_study, fit_loglog, strong_convergence_study
from .leverage import KernelSpec, Regularisation, kernel_eval, leverage_all, leverage_coeffs, make_kernel, nw_ratio
from .noise import IncrementBlock, NoisePlan, coarsen, generate
from .particles import ParticleEnsemble, SimConfig, em_step, init_ensemble, price_vanilla, simulate

__version__ = "0.1.0"

__all__ = [
    "ArbitrageError",
    "CallGrid",
    "ConfigError",
    "ConvergenceReport",
    "CriticalTime",
    "FellerInfo",
    "HestonParams",
    "IncrementBlock",
    "KernelSpec",
    "LocalVolSurface",
    "NoisePlan",
    "NumericalError",
    "ParticleEnsemble",
    "QuadratureError",
    "Regularisation",
    "SimConfig",
    "build_call_grid",
    "chaos_study",
    "cir_mean",
    "cir_order_study",
    "coarsen",
    "critical_time",
    "dupire_local_vol",
    "em_step",
    "feller_ratio",
    "fit_loglog",
    "fte_step",
    "generate",
    "heston_call",
    "heston_put",
    "init_ensemble",
    "kernel_eval",
    "leverage_all",
    "leverage_coeffs",
    "make_kernel",
    "nw_ratio",
    "price_vanilla",
    "simulate",
    "strong_convergence_study",
    "surface_eval",
]
