"""Command-line orchestration: subcommand dispatch, CSV/figure emission, and
run manifests for reproducibility.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O
failure. All numeric CSV output uses 17 significant digits so 8-byte reals
round-trip exactly.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cir import critical_time, feller_ratio
from .config import RunConfig, parse_config, parse_config_text, preset_names, preset_path
from .dupire import build_call_grid, dupire_local_vol, load_surface, reprice_grid_mc
from .errors import ConfigError, NumericalError
from .experiments import ConvergenceReport, chaos_study, cir_order_study, strong_convergence_study
from .leverage import sigma_tilde_max
from .particles import SimConfig, price_vanilla, simulate

__all__ = ["main", "run"]

SUBCOMMANDS = ("diagnose", "dupire-build", "simulate", "price", "strong-convergence", "chaos", "cir-order")

ENV_OUTPUT_DIR = "HLSV_OUTPUT_DIR"


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) if isinstance(c, (str, int)) else _fmt(c) for c in row) + "\n")


def _resolve_out_dir(cli_out: str | None, config: RunConfig) -> Path:
    if cli_out:
        return Path(cli_out)
    if config["output.dir"]:
        return Path(config["output.dir"])
    return Path(os.environ.get(ENV_OUTPUT_DIR, "hlsv-out"))


def _surface_from_config(config: RunConfig):
    if config["surface.source"] == "file":
        return _read_surface_csv(Path(config["surface.path"]), config)
    grid = build_call_grid(config.market_params(), config["grid.maturities"], config["grid.strikes"])
    return dupire_local_vol(
        grid,
        sigma_lo=config["surface.sigma_lo"],
        sigma_hi=config["surface.sigma_hi"],
        lipschitz_cap=config["surface.lipschitz_cap"],
    )


def _read_surface_csv(path: Path, config: RunConfig):
    if not path.is_file():
        raise ConfigError(f"surface.path: file not found: {path}")
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    times = np.unique(rows[:, 0])
    strikes = np.unique(rows[:, 1])
    sigma = np.full((times.size, strikes.size), np.nan)
    ti = np.searchsorted(times, rows[:, 0])
    ki = np.searchsorted(strikes, rows[:, 1])
    sigma[ti, ki] = rows[:, 2]
    if np.isnan(sigma).any():
        raise ConfigError(f"surface.path: {path} does not hold a full (t, K) grid")
    return load_surface(
        times,
        strikes,
        sigma,
        sigma_lo=config["surface.sigma_lo"],
        sigma_hi=config["surface.sigma_hi"],
        lipschitz_cap=config["surface.lipschitz_cap"],
    )


def _sim_config(config: RunConfig, surface) -> SimConfig:
    kernel, reg = config.kernel_and_reg()
    return SimConfig(
        params=config.calibrated_params(),
        horizon=config["sim.horizon"],
        n_steps=config["sim.steps"],
        n_particles=config["sim.particles"],
        seed=config["seed"],
        surface=surface,
        kernel=kernel if config["sim.leverage"] == "calibrated" else None,
        reg=reg if config["sim.leverage"] == "calibrated" else None,
        leverage_mode=config["sim.leverage"],
        record=config["sim.record"],
    )


def _report_outputs(report: ConvergenceReport, out_dir: Path, stem: str, xlabel: str, plot: bool) -> tuple[list[str], dict]:
    report_path = out_dir / f"{stem}-report.csv"
    _write_csv(
        report_path,
        ["resolution", "rmse", "seed"],
        [(c.resolution, c.error, c.seed) for c in report.cells],
    )
    outputs = [str(report_path)]
    if plot:
        fig_path = out_dir / f"{stem}-loglog.svg"
        from .plots import loglog_figure

        loglog_figure(report, str(fig_path), xlabel=xlabel, title=stem)
        outputs.append(str(fig_path))
    lo, hi = report.ci95
    summary = {
        "slope": report.slope,
        "ci_low": lo,
        "ci_high": hi,
        "rate": report.rate,
        "points": [[int(r), e] for r, e in report.points],
    }
    print(f"{stem}: slope={report.slope:.6f} ci95=[{lo:.6f}, {hi:.6f}] rate={report.rate:.6f}")
    return outputs, summary


def run(subcommand: str, config: RunConfig, out_dir: Path, *, threads: int = 1, plot: bool = True) -> dict:
    """Execute one subcommand; returns the manifest dictionary (also written
    to ``<subcommand>-manifest.json`` in the output directory)."""
    t_start = time.perf_counter()
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write-probe"
    probe.write_text("")
    probe.unlink()

    outputs: list[str] = []
    summary: dict = {}

    if subcommand == "diagnose":
        params = config.calibrated_params()
        info = feller_ratio(params)
        kernel, reg = config.kernel_and_reg()
        lam = config["diagnose.lam"]
        lam_source = "config"
        if lam == 0.0:
            lam = 2.0 * sigma_tilde_max(config["surface.sigma_hi"], kernel, reg) ** 2
            lam_source = "heuristic 2*sigma_tilde_max^2"
        tstar = critical_time(params, lam)
        print(f"feller ratio nu = {info.nu:.6g}  (nu* = {info.nu_star:.6g})")
        print(f"  nu >= 1 (strictly positive variance paths): {info.nu_ge_1}")
        print(f"  nu > 3 (half-order variance scheme hypothesis): {info.nu_gt_3}")
        print(f"  nu > nu* (half-order log-spot scheme hypothesis): {info.nu_gt_star}")
        print(f"critical time T*(lambda={lam:.6g}, {lam_source}) = {tstar}")
        summary = {
            "nu": info.nu,
            "nu_star": info.nu_star,
            "nu_ge_1": info.nu_ge_1,
            "nu_gt_3": info.nu_gt_3,
            "nu_gt_star": info.nu_gt_star,
            "lambda": lam,
            "t_star": tstar.as_float(),
        }

    elif subcommand == "dupire-build":
        surface = _surface_from_config(config)
        surface_path = out_dir / "surface.csv"
        rows = [
            (t, k, surface.sigma[i, j])
            for i, t in enumerate(surface.maturities)
            for j, k in enumerate(surface.strikes)
        ]
        _write_csv(surface_path, ["t", "K", "sigma"], rows)
        meta_path = out_dir / "surface-meta.json"
        meta = {
            "sigma_lo": surface.sigma_lo,
            "sigma_hi": surface.sigma_hi,
            "lipschitz_cap": surface.lipschitz_cap,
            "interpolation": surface.interpolation,
            "diagnostics": surface.diagnostics,
        }
        meta_path.write_text(json.dumps(meta, indent=2) + "\n")
        outputs += [str(surface_path), str(meta_path)]
        if plot:
            from .plots import surface_figure

            fig_path = out_dir / "surface.svg"
            surface_figure(surface, str(fig_path))
            outputs.append(str(fig_path))
        summary = {
            "nodes": int(surface.sigma.size),
            "sigma_min": float(surface.sigma.min()),
            "sigma_max": float(surface.sigma.max()),
            **surface.diagnostics,
        }
        print(f"surface: {surface.sigma.shape[0]} maturities x {surface.sigma.shape[1]} strikes, "
              f"values in [{surface.sigma.min():.6g}, {surface.sigma.max():.6g}]")

    elif subcommand in ("simulate", "price"):
        surface = _surface_from_config(config) if config["sim.leverage"] == "calibrated" else None
        sim_config = _sim_config(config, surface)
        result = simulate(sim_config, threads=threads)
        if subcommand == "simulate":
            terminal_path = out_dir / "terminal.csv"
            ens = result.terminal
            s = np.exp(ens.x)
            _write_csv(
                terminal_path,
                ["i", "X", "S", "V_raw", "V_plus"],
                [(i, ens.x[i], s[i], ens.v_raw[i], ens.v_plus[i]) for i in range(ens.n_particles)],
            )
            outputs.append(str(terminal_path))
            if result.path_x is not None:
                path_path = out_dir / "path.csv"
                _write_csv(
                    path_path,
                    ["step", "t", "i", "X", "V_raw"],
                    (
                        (m, result.times[m], i, result.path_x[i, m], result.path_v_raw[i, m])
                        for m in range(result.times.size)
                        for i in range(ens.n_particles)
                    ),
                )
                outputs.append(str(path_path))
            summary = {"n_particles": ens.n_particles, "t": ens.t, "spot_mean": float(s.mean())}
            print(f"simulate: {ens.n_particles} particles to t={ens.t:.6g}, spot mean {s.mean():.6f}")
        else:
            price, se = price_vanilla(result.terminal, config["price.payoff"], config["price.strike"])
            price_path = out_dir / "price.csv"
            _write_csv(
                price_path,
                ["payoff", "strike", "price", "std_error"],
                [(config["price.payoff"], config["price.strike"], price, se)],
            )
            outputs.append(str(price_path))
            summary = {"payoff": config["price.payoff"], "strike": config["price.strike"], "price": price, "std_error": se}
            print(f"price: {config['price.payoff']} K={config['price.strike']:g} -> {price:.6f} +- {se:.6f}")

    elif subcommand == "strong-convergence":
        surface = _surface_from_config(config)
        sim_config = _sim_config(config, surface)
        report = strong_convergence_study(
            sim_config,
            config["experiment.m_list"],
            config["experiment.m_ref"],
            seeds=config["experiment.seeds"],
            metric=config["experiment.metric"],
            threads=threads,
        )
        outputs, summary = _report_outputs(report, out_dir, "strong-convergence", "time steps M", plot)

    elif subcommand == "chaos":
        surface = _surface_from_config(config)
        sim_config = _sim_config(config, surface)
        report = chaos_study(
            sim_config,
            config["experiment.n_list"],
            seeds=config["experiment.seeds"],
            threads=threads,
        )
        outputs, summary = _report_outputs(report, out_dir, "chaos", "particles N", plot)

    elif subcommand == "cir-order":
        report = cir_order_study(
            config.calibrated_params(),
            config["experiment.m_list"],
            config["experiment.m_ref"],
            n_paths=config["experiment.cir_paths"],
            horizon=config["sim.horizon"],
            base_seed=config["seed"],
        )
        outputs, summary = _report_outputs(report, out_dir, "cir-order", "time steps M", plot)

    else:
        raise ConfigError(f"unknown subcommand {subcommand!r}")

    manifest = {
        "subcommand": subcommand,
        "config_sha256": config.sha256(),
        "seed": config["seed"],
        "versions": {
            "hlsv": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": time.perf_counter() - t_start,
        "outputs": outputs,
        "summary": summary,
    }
    manifest_path = out_dir / f"{subcommand}-manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, default=float) + "\n")
    return manifest


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlsv", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hlsv {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", default=None, help="config file path")
        p.add_argument("--preset", default=None, help=f"shipped preset name ({', '.join(preset_names())})")
        p.add_argument("--out", default=None, help=f"output directory (default: $" + ENV_OUTPUT_DIR + " or ./hlsv-out)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker thread cap")
        p.add_argument("--no-plot", action="store_true", help="skip figure rendering")
        if name == "diagnose":
            p.add_argument("--lam", type=float, default=None, help="exponential-moment demand lambda")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config is not None and args.preset is not None:
            raise ConfigError("pass either a config file or --preset, not both")
        if args.preset is not None:
            config = parse_config(preset_path(args.preset))
        else:
            config = parse_config(args.config)
        overrides = []
        if args.seed is not None:
            overrides.append(f"seed = {args.seed}")
        if getattr(args, "lam", None) is not None:
            overrides.append(f"diagnose.lam = {args.lam}")
        if overrides:
            base = config.canonical_text() + "\n".join(overrides) + "\n"
            config = parse_config_text(base, origin="<cli-overrides>")
        out_dir = _resolve_out_dir(args.out, config)
        run(args.subcommand, config, out_dir, threads=max(1, args.threads), plot=not args.no_plot)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
