"""
Weighted penalized-spline estimate of the mean function mu(t).

mu_hat(t) = B(t)^T gamma, where gamma minimizes
sum_ij w_ij {X_ij - B(t_ij)^T gamma}^2 + (lambda_mu / 2) gamma^T Q_mu gamma.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from infpca.core.bspline import KnotVector, SplineBasis, penalty_mean
from infpca.core.smoother_base import NormalEquations, PenalizedSmoother, check_weights
from infpca.io.dataset import LongitudinalDataset

WeightsLike = Optional[Sequence[np.ndarray] | np.ndarray]


class MeanFit(BaseModel):
    """Coefficients of mu_hat with the smoothing parameter that produced them."""

    model_config = ConfigDict(frozen=True)

    knots: KnotVector
    gamma: List[float]
    lambda_mu: float = Field(gt=0)
    penalty_order: int = 2
    effective_df: float
    gcv_score: float
    # lambda_mu * q^(2m - 1); the convergence theory wants this bounded
    smoothing_bound: float

    _basis: SplineBasis = PrivateAttr()

    def model_post_init(self, __context) -> None:
        self._basis = SplineBasis(self.knots)

    @property
    def basis(self) -> SplineBasis:
        return self._basis

    @property
    def gamma_array(self) -> np.ndarray:
        return np.asarray(self.gamma, dtype=float)

    def __call__(self, t: float | np.ndarray) -> float | np.ndarray:
        if np.ndim(t) == 0:
            return evaluate_mean(self, float(t))
        return evaluate_mean_grid(self, t)


def flatten_weights(data: LongitudinalDataset, weights: WeightsLike) -> np.ndarray:
    """Per-subject weight arrays (or a flat array, or None for unit weights) as one vector."""
    n = data.num_observations
    if weights is None:
        return np.ones(n)
    if isinstance(weights, np.ndarray) and weights.ndim == 1 and weights.size == n:
        flat = weights
    else:
        parts = list(weights)
        if len(parts) != data.num_subjects:
            raise ValueError(
                f"Expected weights for {data.num_subjects} subjects, got {len(parts)}"
            )
        for subject, w in zip(data.subjects, parts):
            if np.size(w) != subject.num_observations:
                raise ValueError(
                    f"Subject {subject.subject_id}: {np.size(w)} weights for "
                    f"{subject.num_observations} observations"
                )
        flat = np.concatenate([np.atleast_1d(np.asarray(w, dtype=float)) for w in parts]) if parts else np.zeros(0)
    if flat.size != n:
        raise ValueError(f"Expected {n} weights, got {flat.size}")
    return check_weights(flat)


class MeanSmoother(PenalizedSmoother):
    """Single-block smoother over all (t_ij, X_ij)."""

    def __init__(
        self,
        data: LongitudinalDataset,
        basis: SplineBasis,
        weights: WeightsLike = None,
        penalty_order: int = 2,
    ):
        super().__init__(penalty_mean(basis, penalty_order))
        self.basis = basis
        self.penalty_order = penalty_order
        self.weights = flatten_weights(data, weights)
        self.values = data.all_values()
        self.design = basis.design_matrix(data.all_times()) if data.num_observations else np.zeros((0, basis.num_basis))

    def _assemble(self) -> NormalEquations:
        weighted = self.weights[:, None] * self.design
        return NormalEquations(
            gram=self.design.T @ weighted,
            rhs=weighted.T @ self.values,
            num_rows=int(self.values.size),
        )

    def weighted_rss(self, coef: np.ndarray) -> float:
        residuals = self.values - self.design @ coef
        return float(np.sum(self.weights * residuals**2))

    def to_fit(self, lam: float) -> MeanFit:
        solution = self.solve(lam)
        q = self.basis.num_basis
        fit = MeanFit(
            knots=self.basis.knots,
            gamma=solution.coef.tolist(),
            lambda_mu=solution.lam,
            penalty_order=self.penalty_order,
            effective_df=solution.effective_df,
            gcv_score=solution.gcv_score,
            smoothing_bound=solution.lam * q ** (2 * self.penalty_order - 1),
        )
        logger.debug(
            f"Mean fit: lambda={fit.lambda_mu:.4g}, df={fit.effective_df:.2f}, "
            f"lambda*q^(2m-1)={fit.smoothing_bound:.3g}"
        )
        return fit


def fit_mean(
    data: LongitudinalDataset,
    weights: WeightsLike,
    basis: SplineBasis,
    lambda_mu: float,
    penalty_order: int = 2,
) -> MeanFit:
    """
    Weighted penalized spline fit of the mean at a fixed smoothing parameter.

    Raises:
        RankDeficiencyError: the penalized system is singular
        ValueError: negative or non-finite weights, lambda_mu <= 0
    """
    return MeanSmoother(data, basis, weights, penalty_order).to_fit(lambda_mu)


def default_lambda_grid(
    data: LongitudinalDataset,
    weights: WeightsLike,
    basis: SplineBasis,
    penalty_order: int = 2,
    num: int = 40,
) -> np.ndarray:
    """40 log-spaced values over [1e-8, 1e4] times tr(B^T W B) / tr(Q_mu)."""
    return MeanSmoother(data, basis, weights, penalty_order).default_lambda_grid(num)


def gcv_select_mean(
    data: LongitudinalDataset,
    weights: WeightsLike,
    basis: SplineBasis,
    lambda_grid: Optional[Sequence[float]] = None,
    penalty_order: int = 2,
) -> Tuple[float, np.ndarray]:
    """
    Smoothing parameter minimizing GCV over the grid.

    Returns:
        (selected lambda_mu, GCV scores aligned with the grid)
    """
    smoother = MeanSmoother(data, basis, weights, penalty_order)
    best, _, scores = smoother.select_lambda(lambda_grid)
    return best.lam, scores


def fit_mean_gcv(
    data: LongitudinalDataset,
    weights: WeightsLike,
    basis: SplineBasis,
    lambda_grid: Optional[Sequence[float]] = None,
    penalty_order: int = 2,
) -> MeanFit:
    """GCV selection and the final fit from one assembly of the normal equations."""
    smoother = MeanSmoother(data, basis, weights, penalty_order)
    best, grid, _ = smoother.select_lambda(lambda_grid)
    if best.lam in (grid.min(), grid.max()):
        logger.info(f"Mean GCV optimum lambda={best.lam:.4g} sits on the grid boundary")
    return smoother.to_fit(best.lam)


def evaluate_mean(fit: MeanFit, t: float) -> float:
    """mu_hat(t) = B(t)^T gamma."""
    return float(fit.basis.evaluate(t) @ fit.gamma_array)


def evaluate_mean_grid(fit: MeanFit, grid: Sequence[float] | np.ndarray) -> np.ndarray:
    return fit.basis.design_matrix(grid) @ fit.gamma_array
