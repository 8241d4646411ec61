"""
Exception hierarchy for the estimation pipeline.

Validation problems stay ``ValueError`` subclasses so callers that only know
about ``ValueError`` keep working.
"""

from typing import List, Optional, Sequence

import numpy as np


class InfpcaError(Exception):
    """Base class for all package errors."""


class DataValidationError(InfpcaError, ValueError):
    """A dataset or input file breaks one or more invariants."""

    def __init__(self, message: str, violations: Optional[Sequence[str]] = None):
        self.violations: List[str] = list(violations or [])
        if self.violations:
            detail = "; ".join(self.violations[:20])
            more = len(self.violations) - 20
            if more > 0:
                detail += f"; ... ({more} more)"
            message = f"{message}: {detail}"
        super().__init__(message)


class DomainError(InfpcaError, ValueError):
    """Evaluation outside the domain of a function or parameterization."""


class WeightError(InfpcaError, ValueError):
    """A nonpositive or non-finite inverse-intensity weight."""

    def __init__(self, message: str, subject_id: Optional[str] = None, time: Optional[float] = None):
        self.subject_id = subject_id
        self.time = time
        if subject_id is not None:
            message = f"{message} (subject={subject_id}, t={time})"
        super().__init__(message)


class RankDeficiencyError(InfpcaError, np.linalg.LinAlgError):
    """Penalized normal equations are singular."""

    def __init__(self, message: str, directions: Optional[np.ndarray] = None):
        self.directions = directions
        super().__init__(message)


class ConvergenceError(InfpcaError, RuntimeError):
    """Optimizer stopped without meeting the tolerance."""

    def __init__(self, message: str, last_iterate: Optional[np.ndarray] = None):
        self.last_iterate = None if last_iterate is None else np.asarray(last_iterate)
        super().__init__(message)
