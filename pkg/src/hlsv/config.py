"""Run configuration: a plain key-value document with dotted sections.

Lines look like ``params.kappa = 1.5``; ``#`` starts a comment. Parsing is
strict: unknown keys are errors, every value is validated against its key's
invariant before any computation happens, and unset keys take the documented
defaults (quartic kernel, delta = 0.01, spot-space bandwidth s0 * N^(-1/5)).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .cir import HestonParams
from .errors import ConfigError
from .leverage import KernelSpec, Regularisation, bandwidth_value, make_kernel

__all__ = ["RunConfig", "parse_config", "parse_config_text", "preset_path", "preset_names", "DEFAULTS"]


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(",") if tok.strip())


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in raw.split(",") if tok.strip())


def _positive(v) -> None:
    if not v > 0:
        raise ValueError(f"must be strictly positive, got {v}")


def _nonnegative(v) -> None:
    if v < 0:
        raise ValueError(f"must be nonnegative, got {v}")


def _open_unit(v) -> None:
    if not -1.0 < v < 1.0:
        raise ValueError(f"must lie strictly inside (-1, 1), got {v}")


def _ascending(v) -> None:
    if len(v) == 0:
        raise ValueError("must be a nonempty ascending list")
    if any(b <= a for a, b in zip(v, v[1:])):
        raise ValueError(f"must be strictly ascending, got {list(v)}")


def _choice(*options: str):
    def check(v) -> None:
        if v not in options:
            raise ValueError(f"must be one of {options}, got {v!r}")

    return check


def _none(_v) -> None:
    return None


# key -> (parser, default, validator)
DEFAULTS: dict[str, tuple] = {
    "seed": (int, 12345, _nonnegative),
    "output.dir": (str, "", _none),
    # synthetic market (pre-calibrated surface generator)
    "market.kappa": (float, 1.4124, _positive),
    "market.theta": (float, 0.0137, _positive),
    "market.xi": (float, 0.2988, _positive),
    "market.rho": (float, -0.1194, _open_unit),
    "market.v0": (float, 0.0094, _positive),
    "market.s0": (float, 100.0, _positive),
    # calibrated model parameters driving the particle system
    "params.kappa": (float, 1.5, _positive),
    "params.theta": (float, 0.01, _positive),
    "params.xi": (float, 0.3, _positive),
    "params.rho": (float, -0.1, _open_unit),
    "params.v0": (float, 0.0094, _positive),
    "params.s0": (float, 100.0, _positive),
    # market grid
    "grid.maturities": (_parse_float_list, tuple(round(0.1 * i, 10) for i in range(1, 16)), _ascending),
    "grid.strikes": (_parse_float_list, tuple(float(k) for k in range(60, 151, 5)), _ascending),
    # local-vol surface construction
    "surface.sigma_lo": (float, 0.01, _positive),
    "surface.sigma_hi": (float, 5.0, _positive),
    "surface.lipschitz_cap": (float, 10.0, _positive),
    "surface.source": (str, "market", _choice("market", "file")),
    "surface.path": (str, "", _none),
    # particle simulation
    "sim.horizon": (float, 1.0, _positive),
    "sim.steps": (int, 200, _positive),
    "sim.particles": (int, 1000, _positive),
    "sim.leverage": (str, "calibrated", _choice("calibrated", "identity")),
    "sim.record": (str, "terminal", _choice("terminal", "full-path")),
    # kernel estimator
    "kernel.family": (str, "quartic", _choice("quartic", "epanechnikov", "gaussian")),
    "kernel.bandwidth_rule": (str, "silverman_like", _choice("silverman_like", "fixed")),
    "kernel.bandwidth": (float, 0.0, _nonnegative),
    "regularisation.delta": (float, 0.01, _positive),
    "regularisation.space": (str, "spot", _choice("spot", "log")),
    # raw kernel-weighted sums, under which the delta floor's effect shrinks
    # like 1/N; switch off for the empirical-mean (infinite-N) convention
    "regularisation.raw_sums": (_parse_bool, True, _none),
    # experiment harnesses
    "experiment.m_list": (_parse_int_list, (16, 32, 64, 128, 256, 512, 1024), _ascending),
    "experiment.m_ref": (int, 16384, _positive),
    "experiment.n_list": (_parse_int_list, (128, 256, 512, 1024, 2048, 4096), _ascending),
    "experiment.seeds": (int, 5, _positive),
    "experiment.metric": (str, "sup", _choice("sup", "terminal")),
    "experiment.cir_paths": (int, 10_000, _positive),
    # pricing
    "price.strike": (float, 100.0, _positive),
    "price.payoff": (str, "call", _choice("call", "put")),
    # diagnostics; 0 means "use the heuristic 2 * sigma_tilde_max^2"
    "diagnose.lam": (float, 0.0, _nonnegative),
}


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_render(x) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run configuration (every key resolved to a value)."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def market_params(self) -> HestonParams:
        return self._params("market")

    def calibrated_params(self) -> HestonParams:
        return self._params("params")

    def _params(self, section: str) -> HestonParams:
        v = self.values
        return HestonParams(
            kappa=v[f"{section}.kappa"],
            theta=v[f"{section}.theta"],
            xi=v[f"{section}.xi"],
            rho=v[f"{section}.rho"],
            v0=v[f"{section}.v0"],
            s0=v[f"{section}.s0"],
        )

    def kernel_and_reg(self, n_particles: int | None = None) -> tuple[KernelSpec, Regularisation]:
        v = self.values
        n = v["sim.particles"] if n_particles is None else n_particles
        eps = bandwidth_value(
            v["kernel.bandwidth_rule"],
            v["params.s0"],
            n,
            fixed=v["kernel.bandwidth"] or None,
        )
        kernel = make_kernel(v["kernel.family"], eps)
        reg = Regularisation(
            epsilon=eps,
            delta=v["regularisation.delta"],
            space=v["regularisation.space"],
            raw_sums=v["regularisation.raw_sums"],
        )
        return kernel, reg

    def canonical_text(self) -> str:
        """Sorted, re-parseable rendering of every resolved key."""
        lines = []
        for key in sorted(self.values):
            lines.append(f"{key} = {_render(self.values[key])}")
        return "\n".join(lines) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()


def _validated(values: dict) -> RunConfig:
    for key, value in values.items():
        _parser, _default, check = DEFAULTS[key]
        try:
            check(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    if values["kernel.bandwidth_rule"] == "fixed" and not values["kernel.bandwidth"] > 0.0:
        raise ConfigError("kernel.bandwidth: fixed bandwidth rule needs a positive value")
    if values["surface.source"] == "file" and not values["surface.path"]:
        raise ConfigError("surface.path: required when surface.source = file")
    return RunConfig(values=values)


def parse_config_text(text: str, origin: str = "<text>") -> RunConfig:
    """Parse and validate a config document; unknown keys are errors."""
    values = {key: default for key, (_p, default, _c) in DEFAULTS.items()}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        parser = DEFAULTS[key][0]
        try:
            values[key] = parser(raw_value)
        except ValueError as exc:
            raise ConfigError(f"{origin}:{lineno}: {key}: {exc}") from None
    return _validated(values)


def parse_config(path: str | Path | None = None) -> RunConfig:
    """Read a config file (or take pure defaults when ``path`` is None)."""
    if path is None:
        return _validated({key: default for key, (_p, default, _c) in DEFAULTS.items()})
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), origin=str(path))


def preset_names() -> list[str]:
    """Names of the shipped parameter presets."""
    pkg = resources.files("hlsv") / "presets"
    return sorted(p.name[: -len(".cfg")] for p in pkg.iterdir() if p.name.endswith(".cfg"))


def preset_path(name: str) -> Path:
    """Filesystem path of a shipped preset config."""
    candidate = resources.files("hlsv") / "presets" / f"{name}.cfg"
    if not candidate.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return Path(str(candidate))
