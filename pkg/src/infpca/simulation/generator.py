"""
Generative model for longitudinal data with informative observation times.

Subject i has a latent covariate process
    Z_i(t) = sin(t + 1/2) + sum_k nu_k zeta_ik phi_k(t),
    nu_k = (-1)^(k+1) / (k+1),  zeta_ik ~ U[-sqrt(3), sqrt(3)],  phi_k(t) = sqrt(2/tau) cos(k pi t),
an outcome X_i(t) = 5 Z_i(t) + eps_i(t), and visits from a Poisson process with
intensity lambda_0(t) exp{beta Z_i(t)}. Visits are drawn by thinning a
piecewise-homogeneous process whose rate bounds the intensity on every cell.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from infpca.core.baseline import create_baseline
from infpca.core.intensity import CovariateMap, IntensityModel, mean_weights
from infpca.io.dataset import LongitudinalDataset, LongitudinalSubject
from infpca.models.config import CovariateDesign, SimConfig


def subject_rng(seed: int, replicate: int, subject: int) -> np.random.Generator:
    """PCG64 substream for one subject, independent of the panel size."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replicate, subject)))
    )


def loadings(num_terms: int) -> np.ndarray:
    """nu_k = (-1)^(k+1) / (k+1), k = 1..num_terms."""
    k = np.arange(1, num_terms + 1)
    return (-1.0) ** (k + 1) / (k + 1)


def basis_functions(t: np.ndarray, num_terms: int, tau: float) -> np.ndarray:
    """phi_k(t) = sqrt(2/tau) cos(k pi t), shape (len(t), num_terms)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = np.arange(1, num_terms + 1)
    return np.sqrt(2.0 / tau) * np.cos(np.pi * t[:, None] * k[None, :])


def covariate_bound(config: SimConfig) -> float:
    """sup |Z(t)| over all subjects: 1 + sqrt(3) sqrt(2/tau) sum |nu_k|."""
    return 1.0 + np.sqrt(3.0) * np.sqrt(2.0 / config.tau) * np.abs(loadings(config.num_terms)).sum()


def intensity_majorant(config: SimConfig) -> float:
    """Constant bound on lambda_0(t) exp{beta Z(t)} over [0, tau] valid for every subject."""
    baseline = create_baseline(config.baseline_family)
    theta = np.asarray(config.baseline_theta, dtype=float)
    peak = float(baseline.evaluate(np.array([0.0, config.tau]), theta).max())
    return peak * float(np.exp(abs(config.beta) * covariate_bound(config)))


def piecewise_majorant(
    config: SimConfig, edges: np.ndarray, latent_at_edges: np.ndarray, lipschitz: float
) -> np.ndarray:
    """
    Per-cell bound on lambda_0(t) exp{beta Z(t)}.

    On a cell [a, b] of width h a function with Lipschitz constant L stays below
    (f(a) + f(b)) / 2 + L h / 2; both baselines are monotone, so lambda_0 peaks
    at an endpoint.
    """
    baseline = create_baseline(config.baseline_family)
    theta = np.asarray(config.baseline_theta, dtype=float)
    lam = baseline.evaluate(edges, theta)
    eta = config.beta * latent_at_edges
    width = np.diff(edges)
    eta_max = 0.5 * (eta[:-1] + eta[1:]) + 0.5 * abs(config.beta) * lipschitz * width
    return np.maximum(lam[:-1], lam[1:]) * np.exp(eta_max)


def true_intensity_model(config: SimConfig) -> IntensityModel:
    return IntensityModel(
        family=config.baseline_family,
        theta=list(config.baseline_theta),
        beta=[config.beta],
        covariate_map=CovariateMap(),
    )


def gen_subject(config: SimConfig, rng: np.random.Generator, subject_id: str = "0") -> LongitudinalSubject:
    """
    Draw one subject: latent scores, covariate record, visit times and outcomes.

    The covariate record is a regular grid of covariate_grid_points times on [0, tau], or with
    CovariateDesign.RANDOM the time 0 plus Poisson(covariate_rate) uniform times.
    Exact Z at each visit is kept in ``outcome_covariates``.
    """
    tau = config.tau
    nu = loadings(config.num_terms)
    zeta = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=config.num_terms)
    weights = nu * zeta

    def latent(t: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.sin(t + 0.5) + basis_functions(t, config.num_terms, tau) @ weights

    if config.covariate_design == CovariateDesign.GRID:
        cov_times = np.linspace(0.0, tau, config.covariate_grid_points)
    else:
        cov_count = rng.poisson(config.covariate_rate)
        cov_times = np.unique(np.concatenate([[0.0], rng.uniform(0.0, tau, size=cov_count)]))

    baseline = create_baseline(config.baseline_family)
    theta = np.asarray(config.baseline_theta, dtype=float)
    edges = np.linspace(0.0, tau, config.thinning_cells + 1)
    width = np.diff(edges)
    k = np.arange(1, config.num_terms + 1)
    lipschitz = 1.0 + np.sqrt(2.0 / tau) * np.pi * float(np.sum(k * np.abs(weights)))
    bound = np.minimum(
        piecewise_majorant(config, edges, latent(edges), lipschitz), intensity_majorant(config)
    )
    cell = np.repeat(np.arange(bound.size), rng.poisson(bound * width))
    candidates = edges[cell] + rng.random(cell.size) * width[cell]
    accept_u = rng.random(cell.size)
    rate = baseline.evaluate(candidates, theta) * np.exp(config.beta * latent(candidates))
    times = np.unique(candidates[accept_u * bound[cell] <= rate])

    z_events = latent(times)
    noise = rng.normal(0.0, np.sqrt(config.noise_var), size=times.size)
    values = config.outcome_scale * z_events + noise

    return LongitudinalSubject(
        subject_id=subject_id,
        tau=tau,
        outcome_times=times.tolist(),
        outcome_values=values.tolist(),
        covariate_times=cov_times.tolist(),
        covariate_values=latent(cov_times)[:, None].tolist(),
        outcome_covariates=z_events[:, None].tolist(),
    )


def simulate_dataset(config: SimConfig, replicate: int = 0, n: Optional[int] = None) -> LongitudinalDataset:
    """Panel of ``n`` (default config.n) subjects; subject i depends only on (seed, replicate, i)."""
    size = config.n if n is None else n
    subjects = [
        gen_subject(config, subject_rng(config.seed, replicate, i), subject_id=str(i))
        for i in range(size)
    ]
    return LongitudinalDataset(
        subjects=subjects,
        time_unit="unspecified",
        provenance=[f"simulated: seed={config.seed}, replicate={replicate}, n={size}"],
    )


@dataclass(frozen=True)
class TrueFunctions:
    """Population mean, covariance and leading eigenpair implied by a SimConfig."""

    mu: Callable[[np.ndarray], np.ndarray]
    cov: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi1: Callable[[np.ndarray], np.ndarray]
    kappa1: float
    eigenvalues: np.ndarray


def true_functions(config: SimConfig) -> TrueFunctions:
    """
    mu(t) = a sin(t + 1/2) and C(s, t) = a^2 sum nu_k^2 phi_k(s) phi_k(t), a = outcome_scale.

    ``cov`` returns the len(s) x len(t) surface.
    """
    scale = config.outcome_scale
    nu = loadings(config.num_terms)
    variances = scale**2 * nu**2  # Var(zeta) = 1

    def mu(t: np.ndarray) -> np.ndarray:
        return scale * np.sin(np.asarray(t, dtype=float) + 0.5)

    def cov(s: np.ndarray, t: np.ndarray) -> np.ndarray:
        left = basis_functions(s, config.num_terms, config.tau)
        right = basis_functions(t, config.num_terms, config.tau)
        return (left * variances) @ right.T

    def phi1(t: np.ndarray) -> np.ndarray:
        values = basis_functions(t, config.num_terms, config.tau)[:, 0]
        return values if np.ndim(t) else values[0]

    order = np.argsort(variances)[::-1]
    return TrueFunctions(mu=mu, cov=cov, phi1=phi1, kappa1=float(variances[order[0]]), eigenvalues=variances[order])


def true_weights(config: SimConfig, data: LongitudinalDataset) -> List[np.ndarray]:
    """Inverse of the generating intensity at each visit, using the exact covariate."""
    return mean_weights(true_intensity_model(config), data, exact_covariates=True)


def mise(
    estimate: Sequence[float] | np.ndarray,
    truth: Sequence[float] | np.ndarray,
    grid: Sequence[float] | np.ndarray,
) -> float:
    """
    Integrated squared error by the trapezoid rule.

    1-D inputs integrate over ``grid``; square 2-D inputs integrate over grid x grid.
    """
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"Estimate shape {estimate.shape} differs from truth {truth.shape}")
    expected = (grid.size,) * estimate.ndim
    if estimate.ndim not in (1, 2) or estimate.shape != expected:
        raise ValueError(f"Values of shape {estimate.shape} do not match a grid of {grid.size} points")
    squared = (estimate - truth) ** 2
    if squared.ndim == 2:
        squared = np.trapezoid(squared, grid, axis=1)
    return float(np.trapezoid(squared, grid))
