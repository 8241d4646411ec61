"""
Penalized weighted least squares shared by the mean and covariance smoothers.

Both estimators minimize

    sum_r w_r (y_r - R_r^T c)^2 + (lambda / 2) c^T Q c

whose stationarity condition, after differentiating and dividing by 2, is
(R^T W R + (lambda / 2) Q) c = R^T W y. Subclasses stream their rows into the
cross-products once; every smoothing parameter then costs one small
factorization.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.linalg import cho_factor, cho_solve

from infpca.core.errors import RankDeficiencyError

# Eigenvalues below this fraction of the largest are treated as zero
_RANK_TOL = 1e-13


@dataclass(frozen=True)
class NormalEquations:
    """Weighted cross-products R^T W R, R^T W y and the row count N."""

    gram: np.ndarray
    rhs: np.ndarray
    num_rows: int


@dataclass(frozen=True)
class SmootherSolution:
    coef: np.ndarray
    lam: float
    effective_df: float
    weighted_rss: float
    gcv_score: float
    penalty_value: float


class PenalizedSmoother(ABC):
    """Abstract penalized smoother with exact GCV on the small system."""

    def __init__(self, penalty: np.ndarray):
        self.penalty = np.asarray(penalty, dtype=float)
        self._equations: Optional[NormalEquations] = None

    @abstractmethod
    def _assemble(self) -> NormalEquations:
        """Accumulate the weighted cross-products over all rows."""
        pass

    @abstractmethod
    def weighted_rss(self, coef: np.ndarray) -> float:
        """sum_r w_r (y_r - R_r^T coef)^2, computed from the residuals."""
        pass

    @property
    def equations(self) -> NormalEquations:
        if self._equations is None:
            self._equations = self._assemble()
        return self._equations

    @property
    def num_rows(self) -> int:
        return self.equations.num_rows

    def system_matrix(self, lam: float) -> np.ndarray:
        matrix = self.equations.gram + 0.5 * lam * self.penalty
        return 0.5 * (matrix + matrix.T)

    def _factor(self, lam: float):
        matrix = self.system_matrix(lam)
        eigenvalues, eigenvectors = np.linalg.eigh(matrix)
        top = max(float(eigenvalues[-1]), 0.0)
        deficient = eigenvalues <= _RANK_TOL * top
        if top == 0.0 or np.any(deficient):
            raise RankDeficiencyError(
                f"Penalized normal equations are singular at lambda={lam:.3g}: "
                f"{int(deficient.sum())} deficient direction(s)",
                directions=eigenvectors[:, deficient],
            )
        return cho_factor(matrix, lower=True)

    def solve(self, lam: float) -> SmootherSolution:
        """Coefficients, effective degrees of freedom and GCV score at ``lam``."""
        if not lam > 0 or not np.isfinite(lam):
            raise ValueError(f"Smoothing parameter must be positive and finite, got {lam}")
        eq = self.equations
        factor = self._factor(lam)
        coef = cho_solve(factor, eq.rhs)
        effective_df = float(np.trace(cho_solve(factor, eq.gram)))
        rss = self.weighted_rss(coef)

        n = eq.num_rows
        denominator = (1.0 - effective_df / n) ** 2 if n else 0.0
        gcv = (rss / n) / denominator if denominator > 0 else float("inf")
        return SmootherSolution(
            coef=coef,
            lam=float(lam),
            effective_df=effective_df,
            weighted_rss=rss,
            gcv_score=float(gcv),
            penalty_value=float(coef @ self.penalty @ coef),
        )

    def gcv_score(self, lam: float) -> float:
        """V(lam) = N^-1 ||(I - A_w) Y_w||^2 / [N^-1 tr(I - A_w)]^2."""
        return self.solve(lam).gcv_score

    def default_lambda_grid(self, num: int = 40, low: float = 1e-8, high: float = 1e4) -> np.ndarray:
        """Log-spaced grid scaled by tr(R^T W R) / tr(Q)."""
        penalty_trace = float(np.trace(self.penalty))
        scale = float(np.trace(self.equations.gram)) / penalty_trace if penalty_trace > 0 else 1.0
        if not scale > 0:
            scale = 1.0
        return np.geomspace(low, high, num) * scale

    def select_lambda(
        self, lambda_grid: Optional[Sequence[float]] = None
    ) -> Tuple[SmootherSolution, np.ndarray, np.ndarray]:
        """
        Minimize GCV over a grid.

        Returns:
            (solution at the argmin, grid, scores); singular grid points score inf

        Raises:
            ValueError: empty grid or no finite score
        """
        grid = self.default_lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
        if grid.size == 0:
            raise ValueError("Lambda grid must not be empty")

        scores = np.full(grid.size, np.inf)
        best: Optional[SmootherSolution] = None
        for k, lam in enumerate(grid):
            try:
                solution = self.solve(float(lam))
            except RankDeficiencyError as exc:
                logger.debug(f"GCV lambda={lam:.4g}: {exc}")
                continue
            scores[k] = solution.gcv_score
            logger.debug(f"GCV lambda={lam:.4g} score={solution.gcv_score:.6g} df={solution.effective_df:.3f}")
            if np.isfinite(solution.gcv_score) and (best is None or solution.gcv_score < best.gcv_score):
                best = solution

        if best is None:
            raise ValueError("GCV score is infinite at every grid point")
        return best, grid, scores


def check_weights(weights: np.ndarray, label: str = "weight") -> np.ndarray:
    """Weights must be finite and nonnegative."""
    weights = np.asarray(weights, dtype=float)
    bad = ~np.isfinite(weights) | (weights < 0)
    if np.any(bad):
        index = int(np.argmax(bad))
        raise ValueError(f"Invalid {label} {weights[index]} at position {index}")
    return weights
