"""
Command-line subcommands: simulate | fit | experiment | rates.

Settings resolve as command-line flags > JSON config file (--config) > model
defaults. Every subcommand writes its artifacts plus a manifest.json listing
their SHA-256 hashes.
"""

import argparse
import os
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

from infpca.core.baseline import BaselineKind
from infpca.core.bspline import KnotPlacement, build_basis
from infpca.core.covariance import evaluate_cov_grid, fit_cov_gcv, raw_cov_points
from infpca.core.fpca import eigen_decompose, evaluate_eigenfunction, variance_shares
from infpca.core.intensity import IntensityModel
from infpca.core.mean import evaluate_mean_grid, fit_mean_gcv
from infpca.core.weighting_factory import create_weights, get_arm_display_name
from infpca.io.artifacts import read_json, write_csv, write_json, write_jsonl, write_manifest
from infpca.io.csv_loader import apply_transform, load_csv, save_csv
from infpca.models.config import CovariateTransform, ExperimentArm, OutcomeTransform, RunConfig
from infpca.simulation.experiment import (
    average_curves,
    identification_bias,
    run_experiment,
    run_rate_study,
)
from infpca.simulation.generator import simulate_dataset, true_functions

OUTPUT_DIR_ENV = "INFPCA_OUTPUT_DIR"
SURFACE_POINTS = 61

# flag dest -> field of SimConfig
_SIM_FLAGS = {"n": "n", "reps": "replicates", "seed": "seed", "tau": "tau", "noise_var": "noise_var", "beta": "beta"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infpca",
        description="Functional PCA for longitudinal data with informative observation times",
    )
    parser.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    parser.add_argument("--output-dir", type=Path, help=f"Output directory (env {OUTPUT_DIR_ENV})")
    parser.add_argument("--log-level", help="Log level (env INFPCA_LOG_LEVEL, default INFO)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, help="Parallel replicate workers")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_run_options(sub: argparse.ArgumentParser) -> None:
        # SUPPRESS keeps a top-level --seed / --jobs when the subcommand omits them
        sub.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        sub.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="Parallel replicate workers")

    def add_basis(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--knots", dest="num_interior_knots", type=int, help="Interior knots K (default floor(n^0.3))")
        sub.add_argument("--order", type=int, help="Spline order l")
        sub.add_argument("--penalty-order", type=int, help="Penalty derivative order m")
        sub.add_argument("--placement", dest="knot_placement", choices=[p.value for p in KnotPlacement])
        sub.add_argument("--components", dest="num_components", type=int, help="Number of components p")
        sub.add_argument("--family", dest="baseline_family", choices=[k.value for k in BaselineKind])
        sub.add_argument("--truncate-quantile", type=float)

    simulate = subparsers.add_parser("simulate", help="Write a simulated panel as CSV")
    simulate.add_argument("--n", type=int)
    simulate.add_argument("--reps", type=int, help="Number of replicate panels")
    simulate.add_argument("--tau", type=float)
    simulate.add_argument("--noise-var", type=float)
    simulate.add_argument("--beta", type=float)
    add_run_options(simulate)

    fit = subparsers.add_parser("fit", help="Fit intensity, mean, covariance and components")
    fit.add_argument("--outcome", dest="outcome_path", type=Path)
    fit.add_argument("--covariate", dest="covariate_path", type=Path)
    fit.add_argument("--arms", nargs="+", choices=[a.value for a in ExperimentArm])
    fit.add_argument("--true-theta", type=float, nargs="+")
    fit.add_argument("--true-beta", type=float, nargs="+")
    fit.add_argument("--outcome-transform", choices=[t.value for t in OutcomeTransform])
    fit.add_argument("--covariate-transform", choices=[t.value for t in CovariateTransform])
    fit.add_argument("--time-unit")
    add_basis(fit)
    add_run_options(fit)

    experiment = subparsers.add_parser("experiment", help="Monte Carlo comparison of UW / TW / EW")
    experiment.add_argument("--n", type=int)
    experiment.add_argument("--reps", type=int)
    experiment.add_argument("--arms", nargs="+", choices=[a.value for a in ExperimentArm])
    experiment.add_argument("--identification-n", type=int, help="Also write the binned identification check")
    add_basis(experiment)
    add_run_options(experiment)

    rates = subparsers.add_parser("rates", help="Sup-norm errors along increasing n")
    rates.add_argument("--sizes", dest="sample_sizes", type=int, nargs="+")
    rates.add_argument("--reps", type=int)
    rates.add_argument("--arm", choices=[a.value for a in ExperimentArm], default=ExperimentArm.EW.value)
    add_basis(rates)
    add_run_options(rates)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional JSON config file and explicit flags."""
    merged: Dict[str, Any] = {}
    if args.config is not None:
        loaded = read_json(args.config)
        if loaded is None:
            raise FileNotFoundError(f"Config file not found: {args.config}")
        merged.update(loaded)

    flags = {k: v for k, v in vars(args).items() if v is not None}
    sim = dict(merged.get("sim", {}))
    for flag, field in _SIM_FLAGS.items():
        if flag in flags:
            sim[field] = flags.pop(flag)
    if sim:
        merged["sim"] = sim

    for key in ("config", "identification_n", "arm"):
        flags.pop(key, None)
    merged.update(flags)
    merged["config_path"] = args.config

    if "output_dir" not in merged and os.getenv(OUTPUT_DIR_ENV):
        merged["output_dir"] = os.getenv(OUTPUT_DIR_ENV)
    if args.command == "fit":
        if "num_components" not in merged:
            raise ValueError("fit needs an explicit number of components (--components or num_components in --config)")
        merged.setdefault("arms", [ExperimentArm.EW.value])
    if args.command == "rates":
        merged["arms"] = [args.arm]
    return RunConfig.model_validate(merged)


def _true_model(config: RunConfig) -> Optional[IntensityModel]:
    if config.true_theta is None:
        return None
    return IntensityModel(
        family=config.baseline_family,
        theta=config.true_theta,
        beta=config.true_beta or [],
    )


def cmd_simulate(config: RunConfig) -> List[Path]:
    """Simulated outcome/covariate CSVs per replicate plus truth on a grid."""
    sim = config.sim
    out = config.output_dir
    written: List[Path] = []
    for replicate in range(sim.replicates):
        suffix = "" if sim.replicates == 1 else f"_rep{replicate:03d}"
        data = simulate_dataset(sim, replicate=replicate)
        written.extend(save_csv(data, out / f"outcomes{suffix}.csv", out / f"covariates{suffix}.csv"))
        mean_visits = data.num_observations / max(data.num_subjects, 1)
        logger.info(f"Replicate {replicate}: {data.num_subjects} subjects, {mean_visits:.2f} visits per subject")

    truth = true_functions(sim)
    grid = np.linspace(0.0, sim.tau, config.eval_points)
    written.append(write_csv(out / "truth.csv", pd.DataFrame({"t": grid, "mu": truth.mu(grid), "phi1": truth.phi1(grid)})))
    surface_grid = np.linspace(0.0, sim.tau, SURFACE_POINTS)
    written.append(write_csv(out / "truth_cov.csv", _surface_frame(surface_grid, truth.cov(surface_grid, surface_grid), "c")))
    written.append(
        write_manifest(out, config, written, seeds={"seed": sim.seed, "replicates": sim.replicates})
    )
    return written


def _surface_frame(grid: np.ndarray, surface: np.ndarray, name: str) -> pd.DataFrame:
    t, s = np.meshgrid(grid, grid, indexing="ij")
    return pd.DataFrame({"t": t.ravel(), "s": s.ravel(), name: surface.ravel()})


def cmd_fit(config: RunConfig) -> List[Path]:
    """Full pipeline on CSV data, one artifact directory per weighting arm."""
    if config.outcome_path is None or config.covariate_path is None:
        raise ValueError("fit needs --outcome and --covariate")
    data = load_csv(config.outcome_path, config.covariate_path, time_unit=None if config.time_unit == "unspecified" else config.time_unit)
    data = apply_transform(data, config.outcome_transform, config.covariate_transform)
    basis = build_basis(
        data.tau,
        config.knots_for(data.num_subjects),
        config.order,
        config.knot_placement,
        sample_times=data.all_times(),
    )
    grid = np.linspace(0.0, data.tau, config.eval_points)
    surface_grid = np.linspace(0.0, data.tau, SURFACE_POINTS)
    written: List[Path] = []
    estimates: Dict[str, Any] = {}

    for arm in config.arms:
        out = config.output_dir / arm.value
        logger.info(f"Fitting arm {arm.value} ({get_arm_display_name(arm)})")
        weights = create_weights(
            arm,
            data,
            true_model=_true_model(config),
            family=config.baseline_family,
            truncate_quantile=config.truncate_quantile,
            tol=config.intensity_tol,
        )
        if weights.model is not None:
            written.append(write_json(out / "intensity.json", weights.model))
            errors = weights.model.standard_errors()
            estimates[arm.value] = {
                "theta": weights.model.theta,
                "beta": weights.model.beta,
                "standard_errors": None if errors is None else errors.tolist(),
            }

        mean_fit = fit_mean_gcv(data, weights.mean, basis, config.lambda_mu_grid, config.penalty_order)
        points = raw_cov_points(data, mean_fit, weights.pairs)
        cov_fit = fit_cov_gcv(points, basis, config.lambda_c_grid, config.penalty_order)
        p = min(config.num_components, basis.num_basis)
        fpca = eigen_decompose(cov_fit, p, basis)

        written.append(write_json(out / "mean.json", mean_fit))
        written.append(write_csv(out / "mean_grid.csv", pd.DataFrame({"t": grid, "mu_hat": evaluate_mean_grid(mean_fit, grid)})))
        written.append(write_json(out / "cov.json", cov_fit))
        written.append(write_csv(out / "cov_grid.csv", _surface_frame(surface_grid, evaluate_cov_grid(cov_fit, surface_grid), "c_hat")))

        shares, cumulative = variance_shares(fpca)
        written.append(
            write_json(
                out / "fpca.json",
                {
                    "fit": fpca,
                    "retained": fpca.retained,
                    "total_variance": fpca.total_variance,
                    "negative_eigenvalues": fpca.negative_eigenvalues,
                },
            )
        )
        retained = fpca.retained
        written.append(
            write_csv(
                out / "eigenvalues.csv",
                pd.DataFrame(
                    {
                        "component": [j + 1 for j in retained],
                        "eigenvalue": [fpca.eigenvalues[j] for j in retained],
                        "share": shares[: len(retained)],
                        "cumulative_share": cumulative[: len(retained)],
                    }
                ),
            )
        )
        components = pd.DataFrame({"t": grid})
        for j in retained:
            components[f"phi_{j + 1}_hat"] = evaluate_eigenfunction(fpca, j, grid)
        written.append(write_csv(out / "components.csv", components))

    written.append(write_manifest(config.output_dir, config, written, seeds={}, extra={"estimates": estimates}))
    return written


def cmd_experiment(config: RunConfig, identification_n: Optional[int] = None) -> List[Path]:
    """Summary table, per-replicate log and averaged curves."""
    result = run_experiment(config)
    out = config.output_dir
    written = [
        write_csv(out / "summary.csv", result.summary()),
        write_jsonl(out / "replicates.jsonl", (r.row() for r in result.replicates)),
        write_csv(out / "curves.csv", average_curves(result, config)),
    ]
    if identification_n:
        written.append(write_csv(out / "identification.csv", identification_bias(config.sim, n=identification_n)))
    written.append(
        write_manifest(out, config, written, seeds={"seed": config.sim.seed, "replicates": config.sim.replicates})
    )
    return written


def cmd_rates(config: RunConfig) -> List[Path]:
    """Median sup-norm errors across the configured sample sizes."""
    frame = run_rate_study(config, config.sample_sizes, replicates=config.sim.replicates, arm=config.arms[0])
    out = config.output_dir
    written = [write_csv(out / "rates.csv", frame)]
    written.append(write_manifest(out, config, written, seeds={"seed": config.sim.seed, "replicates": config.sim.replicates}))
    return written


def run_command(config: RunConfig, args: argparse.Namespace) -> List[Path]:
    commands: Dict[str, Callable[[], List[Path]]] = {
        "simulate": lambda: cmd_simulate(config),
        "fit": lambda: cmd_fit(config),
        "experiment": lambda: cmd_experiment(config, getattr(args, "identification_n", None)),
        "rates": lambda: cmd_rates(config),
    }
    if config.command not in commands:
        raise ValueError(f"Unknown command: {config.command}. Available: {list(commands)}")
    return commands[config.command]()
