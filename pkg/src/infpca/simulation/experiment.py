"""
Monte Carlo runner comparing unit, true and estimated inverse-intensity weights.

Each replicate simulates a panel, then per arm: weights -> GCV mean fit ->
raw covariances -> GCV covariance fit -> eigen-decomposition -> integrated
squared errors against the known truth. Replicates are independent and
deterministic given (seed, replicate), so they run in a process pool and are
collected in replicate order.
"""

from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel

from infpca.core.bspline import build_basis
from infpca.core.covariance import evaluate_cov_grid, fit_cov_gcv, raw_cov_points
from infpca.core.errors import InfpcaError
from infpca.core.fpca import eigen_decompose, evaluate_eigenfunction, first_pc_mise
from infpca.core.mean import evaluate_mean_grid, fit_mean_gcv
from infpca.core.weighting_factory import create_weights
from infpca.models.config import ExperimentArm, RunConfig, SimConfig
from infpca.simulation.generator import (
    mise,
    simulate_dataset,
    true_functions,
    true_intensity_model,
    true_weights,
)

METRICS = ("mu", "cov", "phi1")


class ReplicateResult(BaseModel):
    """Errors of one arm on one simulated panel."""

    replicate: int
    arm: ExperimentArm
    n: int
    num_observations: int = 0
    mise_mu: Optional[float] = None
    mise_cov: Optional[float] = None
    mise_phi1: Optional[float] = None
    sup_mu: Optional[float] = None
    sup_cov: Optional[float] = None
    kappa1: Optional[float] = None
    lambda_mu: Optional[float] = None
    lambda_c: Optional[float] = None
    beta_hat: Optional[float] = None
    beta_se: Optional[float] = None
    error: Optional[str] = None
    mu_curve: Optional[List[float]] = None
    phi1_curve: Optional[List[float]] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def row(self) -> dict:
        """Flat record without the curves."""
        record = self.model_dump(mode="json", exclude={"mu_curve", "phi1_curve"})
        return record


class ExperimentResult(BaseModel):
    n: int
    replicates: List[ReplicateResult]

    def summary(self) -> pd.DataFrame:
        return summarize(self.replicates)


def evaluation_grid(config: RunConfig) -> np.ndarray:
    return np.linspace(0.0, config.sim.tau, config.eval_points)


def run_replicate(config: RunConfig, n: int, replicate: int, arms: Optional[Sequence[ExperimentArm]] = None) -> List[ReplicateResult]:
    """Simulate one panel and evaluate every arm on it; failures are recorded per arm."""
    sim = config.sim
    data = simulate_dataset(sim, replicate=replicate, n=n)
    truth = true_functions(sim)
    grid = evaluation_grid(config)
    true_mu = truth.mu(grid)
    true_cov = truth.cov(grid, grid)
    true_phi1 = truth.phi1(grid)

    basis = build_basis(sim.tau, config.knots_for(n), config.order, config.knot_placement, data.all_times())
    results = []
    for arm in arms or config.arms:
        base = dict(replicate=replicate, arm=arm, n=n, num_observations=data.num_observations)
        try:
            weights = create_weights(
                arm,
                data,
                true_model=true_intensity_model(sim),
                family=config.baseline_family,
                truncate_quantile=config.truncate_quantile,
                tol=config.intensity_tol,
            )
            mean_fit = fit_mean_gcv(data, weights.mean, basis, config.lambda_mu_grid, config.penalty_order)
            points = raw_cov_points(data, mean_fit, weights.pairs)
            cov_fit = fit_cov_gcv(points, basis, config.lambda_c_grid, config.penalty_order)
            fpca = eigen_decompose(cov_fit, min(config.num_components, basis.num_basis), basis)
        except (InfpcaError, ValueError, np.linalg.LinAlgError) as exc:
            logger.warning(f"Replicate {replicate}, arm {arm.value}: {type(exc).__name__}: {exc}")
            results.append(ReplicateResult(**base, error=f"{type(exc).__name__}: {exc}"))
            continue

        mu_hat = evaluate_mean_grid(mean_fit, grid)
        cov_hat = evaluate_cov_grid(cov_fit, grid)
        phi1_hat = np.asarray(evaluate_eigenfunction(fpca, 0, grid))
        if np.trapezoid(phi1_hat * true_phi1, grid) < 0:
            phi1_hat = -phi1_hat

        beta_hat = beta_se = None
        if arm == ExperimentArm.EW and weights.model is not None:
            beta_hat = weights.model.beta[0]
            errors = weights.model.standard_errors()
            beta_se = None if errors is None else float(errors[-1])

        results.append(
            ReplicateResult(
                **base,
                mise_mu=mise(mu_hat, true_mu, grid),
                mise_cov=mise(cov_hat, true_cov, grid),
                mise_phi1=first_pc_mise(fpca, true_phi1, grid),
                sup_mu=float(np.max(np.abs(mu_hat - true_mu))),
                sup_cov=float(np.max(np.abs(cov_hat - true_cov))),
                kappa1=fpca.eigenvalues[0],
                lambda_mu=mean_fit.lambda_mu,
                lambda_c=cov_fit.lambda_c,
                beta_hat=beta_hat,
                beta_se=beta_se,
                mu_curve=mu_hat.tolist(),
                phi1_curve=phi1_hat.tolist(),
            )
        )
    return results


def _replicate_task(args: Tuple[RunConfig, int, int, Optional[Tuple[ExperimentArm, ...]]]) -> List[ReplicateResult]:
    config, n, replicate, arms = args
    return run_replicate(config, n, replicate, arms)


def _run_replicates(
    config: RunConfig, n: int, replicates: int, arms: Optional[Sequence[ExperimentArm]] = None
) -> List[ReplicateResult]:
    tasks = [(config, n, r, tuple(arms) if arms else None) for r in range(replicates)]
    if config.jobs > 1 and replicates > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as executor:
            # map keeps replicate order regardless of completion order
            batches = list(executor.map(_replicate_task, tasks))
    else:
        batches = [_replicate_task(task) for task in tasks]
    return [row for batch in batches for row in batch]


def run_experiment(config: RunConfig, n: Optional[int] = None, replicates: Optional[int] = None) -> ExperimentResult:
    """
    Monte Carlo comparison of the configured arms.

    Args:
        config: run configuration (simulation design in ``config.sim``)
        n: subjects per panel, default ``config.sim.n``
        replicates: number of panels, default ``config.sim.replicates``
    """
    size = n or config.sim.n
    reps = replicates or config.sim.replicates
    if reps < 1:
        raise ValueError(f"Need at least one replicate, got {reps}")
    logger.info(f"Running {reps} replicate(s) at n={size} for arms {[a.value for a in config.arms]}")
    rows = _run_replicates(config, size, reps)
    result = ExperimentResult(n=size, replicates=rows)
    failures = sum(not r.ok for r in rows)
    if failures:
        logger.warning(f"{failures} arm fit(s) failed; see the error column of the replicate log")
    check_ordering(result.summary())
    return result


def summarize(rows: Sequence[ReplicateResult]) -> pd.DataFrame:
    """Mean and sd (ddof=1, NA for a single replicate) of each MISE per arm; failed fits excluded."""
    records = []
    arms = list(dict.fromkeys(r.arm for r in rows))
    for arm in arms:
        arm_rows = [r for r in rows if r.arm == arm]
        ok = [r for r in arm_rows if r.ok]
        record = {
            "arm": arm.value,
            "n": arm_rows[0].n,
            "replicates": len(ok),
            "failures": len(arm_rows) - len(ok),
        }
        for metric in METRICS:
            values = pd.Series([getattr(r, f"mise_{metric}") for r in ok], dtype=float)
            record[f"{metric}_mean"] = values.mean() if len(values) else np.nan
            record[f"{metric}_sd"] = values.std(ddof=1) if len(values) > 1 else np.nan
        records.append(record)
    return pd.DataFrame.from_records(records)


def check_ordering(summary: pd.DataFrame) -> bool:
    """Weighted arms should beat UW on every metric; logged, never raised."""
    by_arm = summary.set_index("arm")
    if "UW" not in by_arm.index:
        return True
    holds = True
    for arm in ("TW", "EW"):
        if arm not in by_arm.index:
            continue
        for metric in METRICS:
            weighted, unweighted = by_arm.loc[arm, f"{metric}_mean"], by_arm.loc["UW", f"{metric}_mean"]
            if not weighted < unweighted:
                holds = False
                logger.warning(f"{arm} does not improve on UW for {metric}: {weighted:.4g} vs {unweighted:.4g}")
    return holds


def average_curves(result: ExperimentResult, config: RunConfig) -> pd.DataFrame:
    """Replicate-averaged mu_hat and sign-aligned phi1_hat per arm, next to the truth."""
    grid = evaluation_grid(config)
    truth = true_functions(config.sim)
    frame = pd.DataFrame({"t": grid, "mu_true": truth.mu(grid), "phi1_true": truth.phi1(grid)})
    for arm in dict.fromkeys(r.arm for r in result.replicates):
        ok = [r for r in result.replicates if r.arm == arm and r.ok]
        if not ok:
            continue
        frame[f"mu_{arm.value}"] = np.mean([r.mu_curve for r in ok], axis=0)
        frame[f"phi1_{arm.value}"] = np.mean([r.phi1_curve for r in ok], axis=0)
    return frame


def run_rate_study(
    config: RunConfig,
    sample_sizes: Optional[Sequence[int]] = None,
    replicates: int = 20,
    arm: ExperimentArm = ExperimentArm.EW,
) -> pd.DataFrame:
    """
    Median sup-norm errors of mu_hat, C_hat and |kappa1_hat - kappa1| along increasing n.

    Returns one row per sample size; a median that fails to decrease along n is logged.
    """
    sizes = list(sample_sizes or config.sample_sizes)
    kappa1 = true_functions(config.sim).kappa1
    records = []
    for n in sizes:
        logger.info(f"Rate study: n={n}, {replicates} replicate(s), arm {arm.value}")
        rows = [r for r in _run_replicates(config, n, replicates, [arm]) if r.ok]
        records.append(
            {
                "n": n,
                "replicates": len(rows),
                "sup_mu_median": float(np.median([r.sup_mu for r in rows])) if rows else np.nan,
                "sup_cov_median": float(np.median([r.sup_cov for r in rows])) if rows else np.nan,
                "kappa1_error_median": float(np.median([abs(r.kappa1 - kappa1) for r in rows])) if rows else np.nan,
            }
        )
    frame = pd.DataFrame.from_records(records)
    for column in ("sup_mu_median", "sup_cov_median", "kappa1_error_median"):
        decreasing = bool(np.all(np.diff(frame[column].to_numpy()) < 0))
        if not decreasing:
            logger.warning(f"Rate study: {column} does not decrease strictly along n={sizes}")
    return frame


def identification_bias(sim: SimConfig, n: int = 1000, num_bins: int = 10, replicate: int = 0) -> pd.DataFrame:
    """
    Binned inverse-intensity-weighted means against the bin average of mu.

    True weights turn the sampled visits into a pseudo-population with uniform
    visit density, so sum w X / sum w within a bin tracks the bin average of mu
    while the plain mean is pulled towards high-Z visits.
    """
    data = simulate_dataset(sim, replicate=replicate, n=n)
    truth = true_functions(sim)
    times = data.all_times()
    values = data.all_values()
    weights = np.concatenate(true_weights(sim, data))

    edges = np.linspace(0.0, sim.tau, num_bins + 1)
    index = np.clip(np.searchsorted(edges, times, side="right") - 1, 0, num_bins - 1)
    nodes, node_weights = np.polynomial.legendre.leggauss(8)
    records = []
    for b in range(num_bins):
        a, c = edges[b], edges[b + 1]
        in_bin = index == b
        points = 0.5 * (a + c) + 0.5 * (c - a) * nodes
        target = float(0.5 * node_weights @ truth.mu(points))
        weighted = float(np.sum(weights[in_bin] * values[in_bin]) / np.sum(weights[in_bin])) if in_bin.any() else np.nan
        unweighted = float(values[in_bin].mean()) if in_bin.any() else np.nan
        records.append(
            {
                "bin_start": a,
                "bin_end": c,
                "count": int(in_bin.sum()),
                "mu_bin": target,
                "weighted_mean": weighted,
                "unweighted_mean": unweighted,
                "weighted_bias": abs(weighted - target),
                "unweighted_bias": abs(unweighted - target),
            }
        )
    return pd.DataFrame.from_records(records)
