"""
Parametric baseline intensities lambda_0(t; theta).

Each family knows how to evaluate lambda_0, its log-gradient with respect to
theta, and how to map theta to an unconstrained vector for quasi-Newton
optimization. New families are registered in ``create_baseline``.
"""

from abc import ABC, abstractmethod
from enum import Enum
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel

from infpca.core.errors import DomainError


class BaselineKind(Enum):
    """Supported baseline families."""

    LOG_LINEAR = "log-linear"  # exp(theta_0 + theta_1 t)
    LINEAR_SHIFT = "linear-shift"  # theta_0 (t + theta_1)


class BaselineMetadata(BaseModel):
    """Metadata describing a baseline family."""

    name: str
    description: str
    kind: BaselineKind
    parameter_names: List[str]
    default_init: List[float]


class BaselineFamily(ABC):
    """Abstract baseline intensity known up to a finite parameter vector."""

    def __init__(self):
        self._metadata = self._create_metadata()

    @abstractmethod
    def _create_metadata(self) -> BaselineMetadata:
        """Create metadata describing this family."""
        pass

    @property
    def metadata(self) -> BaselineMetadata:
        return self._metadata

    @property
    def kind(self) -> BaselineKind:
        return self._metadata.kind

    @property
    def num_params(self) -> int:
        return len(self._metadata.parameter_names)

    @abstractmethod
    def evaluate(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """lambda_0(t; theta)."""
        pass

    @abstractmethod
    def log_gradient(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """d log lambda_0(t) / d theta, shape (len(t), num_params)."""
        pass

    @abstractmethod
    def log_hessian_diag(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Diagonal of d^2 log lambda_0(t) / d theta^2 (both families are separable)."""
        pass

    @abstractmethod
    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def from_unconstrained(self, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return theta and the diagonal Jacobian d theta / d phi."""
        pass

    def validate(self, theta: np.ndarray, domain_end: float) -> None:
        """Raise DomainError unless lambda_0 > 0 and finite on [0, domain_end]."""
        grid = np.linspace(0.0, domain_end, 65)
        values = self.evaluate(grid, np.asarray(theta, dtype=float))
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DomainError(
                f"Baseline {self.kind.value} with theta={list(theta)} is not "
                f"strictly positive on [0, {domain_end}]"
            )


class LogLinearBaseline(BaselineFamily):
    """lambda_0(t) = exp(theta_0 + theta_1 t); positive for every theta."""

    def _create_metadata(self) -> BaselineMetadata:
        return BaselineMetadata(
            name="Log-linear baseline",
            description="exp(theta_0 + theta_1 * t)",
            kind=BaselineKind.LOG_LINEAR,
            parameter_names=["theta_0", "theta_1"],
            default_init=[0.0, 0.0],
        )

    def evaluate(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.exp(theta[0] + theta[1] * np.asarray(t, dtype=float))

    def log_gradient(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.column_stack([np.ones_like(t), t])

    def log_hessian_diag(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.zeros((np.asarray(t).size, 2))

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float).copy()

    def from_unconstrained(self, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        phi = np.asarray(phi, dtype=float)
        return phi.copy(), np.ones_like(phi)


class LinearShiftBaseline(BaselineFamily):
    """
    lambda_0(t) = theta_0 (t + theta_1) with theta_0 > 0 and theta_1 > 0.

    Positivity on [0, tau] needs t + theta_1 > 0 at t = 0, so the optimizer
    works on (log theta_0, log theta_1).
    """

    def _create_metadata(self) -> BaselineMetadata:
        return BaselineMetadata(
            name="Linear-shift baseline",
            description="theta_0 * (t + theta_1)",
            kind=BaselineKind.LINEAR_SHIFT,
            parameter_names=["theta_0", "theta_1"],
            default_init=[1.0, 1.0],
        )

    def evaluate(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return theta[0] * (np.asarray(t, dtype=float) + theta[1])

    def log_gradient(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.column_stack(
            [np.full_like(t, 1.0 / theta[0]), 1.0 / (t + theta[1])]
        )

    def log_hessian_diag(self, t: np.ndarray, theta: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.column_stack(
            [np.full_like(t, -1.0 / theta[0] ** 2), -1.0 / (t + theta[1]) ** 2]
        )

    def to_unconstrained(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if np.any(theta <= 0):
            raise DomainError(
                f"Linear-shift baseline needs theta_0 > 0 and theta_1 > 0, got {list(theta)}"
            )
        return np.log(theta)

    def from_unconstrained(self, phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        theta = np.exp(np.asarray(phi, dtype=float))
        return theta, theta


def create_baseline(kind: BaselineKind | str) -> BaselineFamily:
    """
    Factory for baseline families.

    Args:
        kind: BaselineKind or its string value

    Returns:
        Baseline family instance
    """
    families = {
        BaselineKind.LOG_LINEAR: LogLinearBaseline,
        BaselineKind.LINEAR_SHIFT: LinearShiftBaseline,
    }
    try:
        key = BaselineKind(kind)
    except ValueError:
        raise ValueError(
            f"Unknown baseline family: {kind}. Available: {[k.value for k in families]}"
        )
    return families[key]()
