"""
B-spline bases on an interval [0, tau].

This module provides the spline machinery shared by the mean and covariance
smoothers: knot vectors, normalized B-spline evaluation (with derivatives),
composite Gauss-Legendre quadrature, the Gram matrix and the two roughness
penalties. All integrals over [0, tau] use ``order`` Gauss nodes per knot
interval, which is exact for every product of two basis functions.
"""

from enum import Enum
from functools import cached_property
from math import comb
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from pydantic import BaseModel, Field, model_validator
from scipy.interpolate import BSpline

from infpca.core.errors import DomainError

_DOMAIN_SLACK = 1e-12


class KnotPlacement(Enum):
    """How interior knots are positioned."""

    UNIFORM = "uniform"
    QUANTILE = "quantile"


class KnotVector(BaseModel):
    """Interior knots, domain end and spline order."""

    interior_knots: List[float] = Field(default_factory=list)
    domain_end: float = Field(gt=0)
    order: int = Field(ge=2)

    @model_validator(mode="after")
    def validate_knots(self) -> "KnotVector":
        knots = np.asarray(self.interior_knots, dtype=float)
        if knots.size == 0:
            return self
        if not np.all(np.isfinite(knots)):
            raise ValueError("Interior knots must be finite")
        if knots[0] <= 0.0 or knots[-1] >= self.domain_end:
            raise ValueError(
                f"Interior knots must lie strictly inside (0, {self.domain_end})"
            )
        if np.any(np.diff(knots) < 0):
            raise ValueError("Interior knots must be nondecreasing")
        _, counts = np.unique(knots, return_counts=True)
        if counts.max() >= self.order:
            raise ValueError(
                f"Interior knot multiplicity must stay below the order ({self.order})"
            )
        return self

    @property
    def num_interior(self) -> int:
        return len(self.interior_knots)

    @property
    def num_basis(self) -> int:
        """q = K + l."""
        return self.num_interior + self.order

    @property
    def full_knots(self) -> np.ndarray:
        """Knot vector padded with ``order`` copies of 0 and tau."""
        return np.concatenate(
            [
                np.zeros(self.order),
                np.asarray(self.interior_knots, dtype=float),
                np.full(self.order, self.domain_end),
            ]
        )

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot locations including both ends of the domain."""
        return np.unique(
            np.concatenate([[0.0], self.interior_knots, [self.domain_end]])
        )

    def mesh_ratio(self) -> float:
        """Largest over smallest spacing between consecutive knots."""
        spacing = np.diff(
            np.concatenate([[0.0], self.interior_knots, [self.domain_end]])
        )
        if spacing.min() <= 0.0:
            return float("inf")
        return float(spacing.max() / spacing.min())


def composite_gauss_nodes(
    breakpoints: Sequence[float], nodes_per_interval: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Legendre nodes and weights on every interval between breakpoints.

    Args:
        breakpoints: Increasing interval boundaries
        nodes_per_interval: Gauss nodes per interval

    Returns:
        (nodes, weights) flattened over all intervals
    """
    if nodes_per_interval < 1:
        raise ValueError("nodes_per_interval must be at least 1")
    edges = np.asarray(breakpoints, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("Breakpoints must be strictly increasing with at least two entries")

    ref_nodes, ref_weights = leggauss(nodes_per_interval)
    left, right = edges[:-1, None], edges[1:, None]
    half = 0.5 * (right - left)
    nodes = (left + right) * 0.5 + half * ref_nodes[None, :]
    weights = half * ref_weights[None, :]
    return nodes.ravel(), weights.ravel()


def gauss_legendre_integrate(
    f: Callable[[np.ndarray], np.ndarray | float],
    a: float,
    b: float,
    nodes_per_interval: int = 4,
    breakpoints: Optional[Sequence[float]] = None,
) -> float:
    """
    Integrate ``f`` over [a, b] by (composite) Gauss-Legendre quadrature.

    ``f`` receives an array of nodes. Exact for polynomials of degree
    2 * nodes_per_interval - 1 on each interval.
    """
    if not a < b:
        raise ValueError(f"Need a < b, got a={a}, b={b}")
    if breakpoints is None:
        edges = np.array([a, b], dtype=float)
    else:
        inner = np.asarray(breakpoints, dtype=float)
        inner = inner[(inner > a) & (inner < b)]
        edges = np.unique(np.concatenate([[a], inner, [b]]))

    nodes, weights = composite_gauss_nodes(edges, nodes_per_interval)
    values = np.broadcast_to(np.asarray(f(nodes), dtype=float), nodes.shape)
    return float(np.dot(weights, values))


class SplineBasis:
    """
    Normalized B-spline basis of S_n with cached Gram and penalty matrices.

    The basis is immutable once built; penalty matrices are computed on first
    request and memoized per derivative order.
    """

    def __init__(self, knots: KnotVector):
        self.knots = knots
        self.order = knots.order
        self.degree = knots.order - 1
        self.domain_end = knots.domain_end
        self.num_basis = knots.num_basis

        self._spline = BSpline(
            knots.full_knots, np.eye(self.num_basis), self.degree, extrapolate=True
        )
        self._derivatives: Dict[int, BSpline] = {0: self._spline}
        self._penalties: Dict[int, np.ndarray] = {}
        self._quad_nodes, self._quad_weights = composite_gauss_nodes(
            knots.breakpoints, self.order
        )
        self.gram = self._integrate_products(0)

    @classmethod
    def from_knots(
        cls, interior_knots: Sequence[float], domain_end: float, order: int = 4
    ) -> "SplineBasis":
        return cls(
            KnotVector(
                interior_knots=list(interior_knots), domain_end=domain_end, order=order
            )
        )

    def __repr__(self) -> str:
        return (
            f"SplineBasis(q={self.num_basis}, order={self.order}, "
            f"tau={self.domain_end}, K={self.knots.num_interior})"
        )

    @property
    def quadrature(self) -> Tuple[np.ndarray, np.ndarray]:
        """Composite Gauss nodes/weights with ``order`` nodes per knot interval."""
        return self._quad_nodes, self._quad_weights

    def _check_domain(self, t: np.ndarray) -> np.ndarray:
        slack = _DOMAIN_SLACK * max(1.0, self.domain_end)
        if not np.all(np.isfinite(t)):
            raise DomainError("Evaluation points must be finite")
        if np.any(t < -slack) or np.any(t > self.domain_end + slack):
            bad = t[(t < -slack) | (t > self.domain_end + slack)]
            raise DomainError(
                f"Evaluation point {bad[0]} outside [0, {self.domain_end}]"
            )
        return np.clip(t, 0.0, self.domain_end)

    def _derivative_spline(self, deriv: int) -> BSpline:
        if deriv < 0 or deriv > self.degree:
            raise ValueError(
                f"Derivative order must be in [0, {self.degree}], got {deriv}"
            )
        if deriv not in self._derivatives:
            self._derivatives[deriv] = self._spline.derivative(deriv)
        return self._derivatives[deriv]

    def design_matrix(self, t: np.ndarray | Sequence[float], deriv: int = 0) -> np.ndarray:
        """Rows B^(deriv)(t_a)^T for every evaluation point, shape (len(t), q)."""
        points = self._check_domain(np.atleast_1d(np.asarray(t, dtype=float)))
        spline = self._derivative_spline(deriv)
        return np.asarray(spline(points), dtype=float).reshape(points.size, self.num_basis)

    def evaluate(self, t: float, deriv: int = 0) -> np.ndarray:
        return self.design_matrix([t], deriv)[0]

    def _integrate_products(self, deriv: int) -> np.ndarray:
        rows = self.design_matrix(self._quad_nodes, deriv)
        product = rows.T @ (self._quad_weights[:, None] * rows)
        return 0.5 * (product + product.T)

    def derivative_gram(self, deriv: int) -> np.ndarray:
        """P_k = int B^(k)(t) B^(k)(t)^T dt (P_0 is the Gram matrix)."""
        if deriv == 0:
            return self.gram
        if deriv not in self._penalties:
            self._penalties[deriv] = self._integrate_products(deriv)
        return self._penalties[deriv]

    @cached_property
    def integrals(self) -> np.ndarray:
        """int_0^tau B_j(t) dt for every basis function."""
        return self._quad_weights @ self.design_matrix(self._quad_nodes)

    def greville_abscissae(self) -> np.ndarray:
        """Knot averages; coefficients of the identity function t -> t."""
        full = self.knots.full_knots
        return np.array(
            [full[j + 1 : j + self.order].mean() for j in range(self.num_basis)]
        )


def _validate_penalty_order(basis: SplineBasis, m: int) -> None:
    if m < 1 or m > basis.order - 1:
        raise ValueError(
            f"Penalty order m must satisfy 1 <= m <= {basis.order - 1}, got {m}"
        )


def build_basis(
    domain_end: float,
    num_interior_knots: int,
    order: int = 4,
    placement: KnotPlacement = KnotPlacement.UNIFORM,
    sample_times: Optional[Sequence[float]] = None,
    max_mesh_ratio: Optional[float] = None,
) -> SplineBasis:
    """
    Build a B-spline basis on [0, domain_end].

    Args:
        domain_end: tau > 0
        num_interior_knots: K >= 0
        order: spline order l >= 2 (4 = cubic)
        placement: uniform spacing or quantiles of ``sample_times``
        sample_times: observation times used by quantile placement
        max_mesh_ratio: optional bound C0 on the knot mesh ratio

    Returns:
        SplineBasis with q = K + l functions
    """
    if not domain_end > 0:
        raise ValueError(f"Domain end must be positive, got {domain_end}")
    if order < 2:
        raise ValueError(f"Spline order must be at least 2, got {order}")
    if num_interior_knots < 0:
        raise ValueError(f"Number of interior knots must be >= 0, got {num_interior_knots}")

    probs = np.arange(1, num_interior_knots + 1) / (num_interior_knots + 1)
    if placement == KnotPlacement.UNIFORM:
        interior = domain_end * probs
    else:
        if sample_times is None:
            raise ValueError("Quantile knot placement needs sample_times")
        times = np.asarray(sample_times, dtype=float)
        times = times[(times > 0.0) & (times < domain_end)]
        if times.size == 0 and num_interior_knots > 0:
            raise ValueError("No sample times strictly inside the domain")
        interior = np.quantile(times, probs) if num_interior_knots > 0 else probs

    knots = KnotVector(
        interior_knots=interior.tolist(), domain_end=domain_end, order=order
    )
    if max_mesh_ratio is not None and knots.mesh_ratio() > max_mesh_ratio * (1 + 1e-9):
        raise ValueError(
            f"Knot mesh ratio {knots.mesh_ratio():.3f} exceeds bound {max_mesh_ratio}"
        )
    return SplineBasis(knots)


def eval_basis(basis: SplineBasis, t: float, deriv: int = 0) -> np.ndarray:
    """Vector (B_1^(deriv)(t), ..., B_q^(deriv)(t))."""
    return basis.evaluate(t, deriv)


def penalty_mean(basis: SplineBasis, m: int = 2) -> np.ndarray:
    """Q_mu = int {B^(m)(t)}{B^(m)(t)}^T dt."""
    _validate_penalty_order(basis, m)
    return basis.derivative_gram(m)


def penalty_cov(basis: SplineBasis, m: int = 2) -> np.ndarray:
    """
    Tensor-product roughness penalty Q_C (q^2 x q^2).

    For a surface f(t, s) = sum eta_ab B_a(t) B_b(s), eta^T Q_C eta equals
    sum_i C(m, i) int int (d^i/dt^i d^(m-i)/ds^(m-i) f)^2, assembled as
    sum_i C(m, i) P_i kron P_(m-i). Index a * q + b matches B(t) kron B(s).
    """
    _validate_penalty_order(basis, m)
    q = basis.num_basis
    penalty = np.zeros((q * q, q * q))
    for i in range(m + 1):
        penalty += comb(m, i) * np.kron(basis.derivative_gram(i), basis.derivative_gram(m - i))
    return 0.5 * (penalty + penalty.T)
