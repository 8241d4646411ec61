"""
Weighted penalized tensor-product spline estimate of the covariance C(t, s).

Raw covariances G_i(t_ij, t_il) = {X_ij - mu_hat(t_ij)}{X_il - mu_hat(t_il)}
over ordered pairs j != l are smoothed by C_hat(t, s) = B(t)^T Xi B(s). Xi is
constrained symmetric by fitting its half-vectorization theta = vech(Xi) through
the duplication matrix, vec(Xi) = Dup theta.
"""

from dataclasses import dataclass
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from infpca.core.bspline import KnotVector, SplineBasis, penalty_cov
from infpca.core.intensity import ordered_pairs
from infpca.core.mean import MeanFit, evaluate_mean_grid
from infpca.core.smoother_base import NormalEquations, PenalizedSmoother, check_weights
from infpca.io.dataset import LongitudinalDataset


class RawCovPoint(NamedTuple):
    subject_id: str
    t: float
    s: float
    value: float
    weight: float


@dataclass(frozen=True)
class SubjectPairs:
    """One subject's residuals and pair weights; pairs follow ``ordered_pairs``."""

    subject_id: str
    times: np.ndarray
    residuals: np.ndarray
    pair_weights: np.ndarray

    @property
    def num_pairs(self) -> int:
        return int(self.pair_weights.size)

    def pair_index(self) -> Tuple[np.ndarray, np.ndarray]:
        return ordered_pairs(self.times.size)


class RawCovariance:
    """
    Raw covariance points stored per subject.

    Iterating yields one RawCovPoint per ordered pair; the smoother consumes
    the per-subject blocks directly.
    """

    def __init__(self, blocks: Sequence[SubjectPairs]):
        self.blocks: List[SubjectPairs] = [b for b in blocks if b.num_pairs > 0]

    def __len__(self) -> int:
        return sum(b.num_pairs for b in self.blocks)

    def __iter__(self) -> Iterator[RawCovPoint]:
        for block in self.blocks:
            j, l = block.pair_index()
            values = block.residuals[j] * block.residuals[l]
            for k in range(j.size):
                yield RawCovPoint(
                    block.subject_id,
                    float(block.times[j[k]]),
                    float(block.times[l[k]]),
                    float(values[k]),
                    float(block.pair_weights[k]),
                )

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Flat (t, s, G, w) over all points."""
        if not self.blocks:
            empty = np.zeros(0)
            return empty, empty, empty, empty
        t, s, g, w = [], [], [], []
        for block in self.blocks:
            j, l = block.pair_index()
            t.append(block.times[j])
            s.append(block.times[l])
            g.append(block.residuals[j] * block.residuals[l])
            w.append(block.pair_weights)
        return np.concatenate(t), np.concatenate(s), np.concatenate(g), np.concatenate(w)


def raw_cov_points(
    data: LongitudinalDataset,
    mean_fit: MeanFit,
    pair_weights: Optional[Sequence[np.ndarray]] = None,
) -> RawCovariance:
    """
    Centered cross-products for every ordered within-subject pair j != l.

    Args:
        data: longitudinal panel
        mean_fit: fitted mean used for centering
        pair_weights: per-subject arrays from ``pair_weights``; unit weights when None

    Returns:
        RawCovariance with m_i (m_i - 1) points per subject
    """
    if pair_weights is not None and len(pair_weights) != data.num_subjects:
        raise ValueError(
            f"Expected pair weights for {data.num_subjects} subjects, got {len(pair_weights)}"
        )
    blocks = []
    for index, subject in enumerate(data.subjects):
        m = subject.num_observations
        if m < 2:
            continue
        expected = m * (m - 1)
        if pair_weights is None:
            weights = np.ones(expected)
        else:
            weights = np.asarray(pair_weights[index], dtype=float)
            if weights.size != expected:
                raise ValueError(
                    f"Subject {subject.subject_id}: {weights.size} pair weights for {expected} pairs"
                )
            weights = check_weights(weights, "pair weight")
        residuals = subject.values_array - evaluate_mean_grid(mean_fit, subject.times_array)
        blocks.append(SubjectPairs(subject.subject_id, subject.times_array, residuals, weights))
    return RawCovariance(blocks)


def duplication_matrix(q: int) -> np.ndarray:
    """
    Dup (q^2 x q(q+1)/2) with vec(Xi) = Dup vech(Xi).

    vec uses row-major index a * q + b; vech lists the upper triangle row by row.
    """
    if q < 1:
        raise ValueError(f"q must be positive, got {q}")
    rows, cols = np.triu_indices(q)
    dup = np.zeros((q * q, rows.size))
    positions = np.arange(rows.size)
    dup[rows * q + cols, positions] = 1.0
    dup[cols * q + rows, positions] = 1.0
    return dup


def vech_to_matrix(theta: np.ndarray, q: int) -> np.ndarray:
    rows, cols = np.triu_indices(q)
    xi = np.zeros((q, q))
    xi[rows, cols] = theta
    xi[cols, rows] = theta
    return xi


class CovFit(BaseModel):
    """Symmetric coefficient matrix Xi stored as its half-vectorization."""

    model_config = ConfigDict(frozen=True)

    knots: KnotVector
    xi_vech: List[float]
    lambda_c: float = Field(gt=0)
    penalty_order: int = 2
    effective_df: float
    gcv_score: float
    # lambda_C * q^(2m - 2); the convergence theory wants this vanishing
    smoothing_bound: float
    num_points: int = 0

    _basis: SplineBasis = PrivateAttr()
    _xi: np.ndarray = PrivateAttr()

    def model_post_init(self, __context) -> None:
        self._basis = SplineBasis(self.knots)
        q = self._basis.num_basis
        if len(self.xi_vech) != q * (q + 1) // 2:
            raise ValueError(
                f"xi_vech needs {q * (q + 1) // 2} entries for q={q}, got {len(self.xi_vech)}"
            )
        self._xi = vech_to_matrix(np.asarray(self.xi_vech, dtype=float), q)

    @property
    def basis(self) -> SplineBasis:
        return self._basis

    @property
    def xi_array(self) -> np.ndarray:
        return self._xi.copy()

    @classmethod
    def from_matrix(cls, basis: SplineBasis, xi: np.ndarray, lambda_c: float = 1.0, **extra) -> "CovFit":
        """Wrap an explicit symmetric coefficient matrix."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (basis.num_basis, basis.num_basis) or not np.allclose(xi, xi.T):
            raise ValueError("Xi must be a symmetric q x q matrix")
        rows, cols = np.triu_indices(basis.num_basis)
        values = dict(effective_df=0.0, gcv_score=float("nan"), smoothing_bound=0.0)
        values.update(extra)
        return cls(knots=basis.knots, xi_vech=xi[rows, cols].tolist(), lambda_c=lambda_c, **values)


class CovSmoother(PenalizedSmoother):
    """Penalized regression of raw covariances on Dup^T (B(t) kron B(s))."""

    def __init__(self, points: RawCovariance, basis: SplineBasis, penalty_order: int = 2):
        q = basis.num_basis
        self.dup = duplication_matrix(q)
        super().__init__(self.dup.T @ penalty_cov(basis, penalty_order) @ self.dup)
        self.points = points
        self.basis = basis
        self.penalty_order = penalty_order

    def _assemble(self) -> NormalEquations:
        q = self.basis.num_basis
        gram = np.zeros((q * q, q * q))
        rhs = np.zeros(q * q)
        for block in self.points.blocks:
            rows = self._tensor_rows(block)
            values = self._values(block)
            weighted = block.pair_weights[:, None] * rows
            gram += rows.T @ weighted
            rhs += weighted.T @ values
        return NormalEquations(
            gram=self.dup.T @ gram @ self.dup,
            rhs=self.dup.T @ rhs,
            num_rows=len(self.points),
        )

    def _tensor_rows(self, block: SubjectPairs) -> np.ndarray:
        design = self.basis.design_matrix(block.times)
        j, l = block.pair_index()
        return (design[j][:, :, None] * design[l][:, None, :]).reshape(j.size, -1)

    @staticmethod
    def _values(block: SubjectPairs) -> np.ndarray:
        j, l = block.pair_index()
        return block.residuals[j] * block.residuals[l]

    def weighted_rss(self, coef: np.ndarray) -> float:
        xi = vech_to_matrix(coef, self.basis.num_basis)
        total = 0.0
        for block in self.points.blocks:
            design = self.basis.design_matrix(block.times)
            fitted = design @ xi @ design.T
            j, l = block.pair_index()
            residuals = self._values(block) - fitted[j, l]
            total += float(np.sum(block.pair_weights * residuals**2))
        return total

    def to_fit(self, lam: float) -> CovFit:
        solution = self.solve(lam)
        q = self.basis.num_basis
        fit = CovFit(
            knots=self.basis.knots,
            xi_vech=solution.coef.tolist(),
            lambda_c=solution.lam,
            penalty_order=self.penalty_order,
            effective_df=solution.effective_df,
            gcv_score=solution.gcv_score,
            smoothing_bound=solution.lam * q ** (2 * self.penalty_order - 2),
            num_points=self.num_rows,
        )
        logger.debug(
            f"Covariance fit: lambda={fit.lambda_c:.4g}, df={fit.effective_df:.2f}, "
            f"lambda*q^(2m-2)={fit.smoothing_bound:.3g}"
        )
        return fit


def fit_cov(
    points: RawCovariance, basis: SplineBasis, lambda_c: float, penalty_order: int = 2
) -> CovFit:
    """
    Symmetric tensor-spline fit of the raw covariances at a fixed lambda_C.

    Raises:
        RankDeficiencyError: the reduced system is singular
    """
    return CovSmoother(points, basis, penalty_order).to_fit(lambda_c)


def gcv_select_cov(
    points: RawCovariance,
    basis: SplineBasis,
    lambda_grid: Optional[Sequence[float]] = None,
    penalty_order: int = 2,
) -> Tuple[float, np.ndarray]:
    """(selected lambda_C, GCV scores aligned with the grid)."""
    best, _, scores = CovSmoother(points, basis, penalty_order).select_lambda(lambda_grid)
    return best.lam, scores


def fit_cov_gcv(
    points: RawCovariance,
    basis: SplineBasis,
    lambda_grid: Optional[Sequence[float]] = None,
    penalty_order: int = 2,
) -> CovFit:
    smoother = CovSmoother(points, basis, penalty_order)
    best, grid, _ = smoother.select_lambda(lambda_grid)
    if best.lam in (grid.min(), grid.max()):
        logger.info(f"Covariance GCV optimum lambda={best.lam:.4g} sits on the grid boundary")
    return smoother.to_fit(best.lam)


def evaluate_cov(fit: CovFit, t: float, s: float) -> float:
    """C_hat(t, s) = B(t)^T Xi B(s), symmetric in its arguments."""
    bt = fit.basis.evaluate(t)
    bs = fit.basis.evaluate(s)
    xi = fit.xi_array
    return float(0.5 * (bt @ xi @ bs + bs @ xi @ bt))


def evaluate_cov_grid(
    fit: CovFit, grid: Sequence[float] | np.ndarray, grid_s: Optional[Sequence[float] | np.ndarray] = None
) -> np.ndarray:
    """Surface C_hat on grid x grid_s (grid_s defaults to grid)."""
    left = fit.basis.design_matrix(grid)
    right = left if grid_s is None else fit.basis.design_matrix(grid_s)
    return left @ fit.xi_array @ right.T
