"""
Functional principal components of a fitted covariance surface.

With C_hat(s, t) = B(s)^T Xi B(t) and Gram matrix W = int B B^T, the integral
equation int C_hat(s, t) phi(s) ds = kappa phi(t) for phi = B^T c reduces to
the symmetric eigenproblem W^(1/2) Xi W^(1/2) u = kappa u with c = W^(-1/2) u,
which makes the eigenfunctions orthonormal in L2[0, tau].
"""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from infpca.core.bspline import KnotVector, SplineBasis
from infpca.core.covariance import CovFit

_SIGN_TOL = 1e-8


class FpcaResult(BaseModel):
    """Eigenvalues (nonincreasing) and eigenfunction coefficients, one row per component."""

    model_config = ConfigDict(frozen=True)

    knots: KnotVector
    eigenvalues: List[float]
    coefficients: List[List[float]]
    num_components: int = Field(ge=1)
    sign_convention: str = "positive-integral"

    _basis: SplineBasis = PrivateAttr()

    def model_post_init(self, __context) -> None:
        self._basis = SplineBasis(self.knots)

    @property
    def basis(self) -> SplineBasis:
        return self._basis

    @property
    def eigenvalues_array(self) -> np.ndarray:
        return np.asarray(self.eigenvalues, dtype=float)

    @property
    def coefficients_array(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=float)

    @property
    def retained(self) -> List[int]:
        """Indices of the first ``num_components`` components with kappa > 0."""
        return [j for j in range(self.num_components) if self.eigenvalues[j] > 0]

    @property
    def negative_eigenvalues(self) -> List[float]:
        return [k for k in self.eigenvalues if k < 0]

    @property
    def total_variance(self) -> float:
        """Sum of the positive eigenvalues."""
        values = self.eigenvalues_array
        return float(values[values > 0].sum())


def _gram_roots(gram: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values, vectors = np.linalg.eigh(gram)
    if values[0] <= 0:
        raise np.linalg.LinAlgError(f"Gram matrix is not positive definite (min eigenvalue {values[0]:.3g})")
    root = (vectors * np.sqrt(values)) @ vectors.T
    inv_root = (vectors / np.sqrt(values)) @ vectors.T
    return root, inv_root


def _orient(coef: np.ndarray, integrals: np.ndarray) -> np.ndarray:
    """Flip so that int phi > 0, or the first non-negligible coefficient is positive."""
    integral = float(integrals @ coef)
    if abs(integral) >= _SIGN_TOL:
        return coef if integral > 0 else -coef
    scale = np.abs(coef).max()
    leading = np.flatnonzero(np.abs(coef) > _SIGN_TOL * max(scale, 1.0))
    if leading.size and coef[leading[0]] < 0:
        return -coef
    return coef


def eigen_decompose(
    cov_fit: CovFit, num_components: int, basis: Optional[SplineBasis] = None
) -> FpcaResult:
    """
    Eigenvalues and W-orthonormal eigenfunctions of the fitted covariance.

    Args:
        cov_fit: symmetric tensor-spline covariance fit
        num_components: p, 1 <= p <= q
        basis: basis of the fit (rebuilt from the fit's knots when omitted)

    Returns:
        FpcaResult holding all q eigenpairs; the first p with kappa > 0 are retained
    """
    basis = basis or cov_fit.basis
    q = basis.num_basis
    if not 1 <= num_components <= q:
        raise ValueError(f"Number of components must be in [1, {q}], got {num_components}")

    root, inv_root = _gram_roots(basis.gram)
    operator = root @ cov_fit.xi_array @ root
    values, vectors = np.linalg.eigh(0.5 * (operator + operator.T))
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]

    coefficients = np.column_stack(
        [_orient(inv_root @ vectors[:, j], basis.integrals) for j in range(q)]
    )
    result = FpcaResult(
        knots=basis.knots,
        eigenvalues=values.tolist(),
        coefficients=coefficients.T.tolist(),
        num_components=num_components,
    )

    negatives = result.negative_eigenvalues
    if negatives:
        logger.warning(
            f"{len(negatives)} negative eigenvalue(s) excluded, most negative {min(negatives):.4g}"
        )
    if len(result.retained) < num_components:
        logger.warning(
            f"Only {len(result.retained)} of {num_components} requested components have positive eigenvalues"
        )
    logger.info(f"Retained {len(result.retained)} component(s), leading eigenvalue {values[0]:.4g}")
    return result


def evaluate_eigenfunction(result: FpcaResult, index: int, t: float | np.ndarray) -> float | np.ndarray:
    """phi_hat_(index+1)(t); ``index`` counts from 0."""
    if not 0 <= index < len(result.eigenvalues):
        raise IndexError(f"Component index {index} out of range")
    coef = result.coefficients_array[index]
    if np.ndim(t) == 0:
        return float(result.basis.evaluate(float(t)) @ coef)
    return result.basis.design_matrix(t) @ coef


def variance_shares(result: FpcaResult) -> Tuple[np.ndarray, np.ndarray]:
    """Share of total variance per positive eigenvalue and the cumulative shares."""
    values = result.eigenvalues_array
    positive = values[values > 0]
    if positive.size == 0:
        return np.zeros(0), np.zeros(0)
    shares = positive / positive.sum()
    return shares, np.cumsum(shares)


def reconstruct_cov(
    result: FpcaResult, p: int, t: float | np.ndarray, s: float | np.ndarray
) -> float | np.ndarray:
    """
    Truncated Mercer sum over the leading p components with positive eigenvalues.

    Scalar (t, s) give a float; arrays give the len(t) x len(s) surface.
    """
    if not 0 <= p <= len(result.eigenvalues):
        raise ValueError(f"p must be in [0, {len(result.eigenvalues)}], got {p}")
    values = result.eigenvalues_array[:p]
    keep = values > 0
    coef = result.coefficients_array[:p][keep]
    left = result.basis.design_matrix(np.atleast_1d(t)) @ coef.T
    right = result.basis.design_matrix(np.atleast_1d(s)) @ coef.T
    surface = (left * values[keep]) @ right.T
    if np.ndim(t) == 0 and np.ndim(s) == 0:
        return float(surface[0, 0])
    return surface


def first_pc_mise(
    result: FpcaResult,
    true_phi: Callable[[np.ndarray], np.ndarray] | Sequence[float] | np.ndarray,
    grid: Sequence[float] | np.ndarray,
) -> float:
    """
    Integrated squared error of the leading eigenfunction after sign alignment.

    The estimate is flipped when int phi_hat phi < 0 so that sign does not count.
    """
    grid = np.asarray(grid, dtype=float)
    truth = np.asarray(true_phi(grid) if callable(true_phi) else true_phi, dtype=float)
    if truth.shape != grid.shape:
        raise ValueError(f"Truth has shape {truth.shape}, grid has {grid.shape}")
    estimate = np.asarray(evaluate_eigenfunction(result, 0, grid))
    if np.trapezoid(estimate * truth, grid) < 0:
        estimate = -estimate
    return float(np.trapezoid((estimate - truth) ** 2, grid))
