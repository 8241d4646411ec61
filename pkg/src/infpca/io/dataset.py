"""
Longitudinal panel types.

A subject carries sparse outcome observations (t_ij, X_ij), a dense covariate
trajectory recorded at its own times, and a follow-up end tau_i. Covariates at
arbitrary times are looked up by last observation carried forward.
"""

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from infpca.core.errors import DataValidationError


class LongitudinalSubject(BaseModel):
    """One subject's outcome and covariate records."""

    model_config = ConfigDict(frozen=True)

    subject_id: str
    tau: float = Field(ge=0)
    outcome_times: List[float] = Field(default_factory=list)
    outcome_values: List[float] = Field(default_factory=list)
    covariate_times: List[float] = Field(default_factory=list)
    covariate_values: List[List[float]] = Field(default_factory=list)
    # Exact covariate values at outcome times, when the generating process is known
    outcome_covariates: Optional[List[List[float]]] = None

    _times: np.ndarray = PrivateAttr()
    _values: np.ndarray = PrivateAttr()
    _cov_times: np.ndarray = PrivateAttr()
    _cov_values: np.ndarray = PrivateAttr()

    @model_validator(mode="after")
    def validate_records(self) -> "LongitudinalSubject":
        times = np.asarray(self.outcome_times, dtype=float)
        if len(self.outcome_values) != times.size:
            raise ValueError(f"Subject {self.subject_id}: outcome times and values differ in length")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(self.outcome_values)):
            raise ValueError(f"Subject {self.subject_id}: outcome records must be finite")
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"Subject {self.subject_id}: outcome times must be strictly increasing")
        if times.size and (times[0] < 0 or times[-1] > self.tau):
            raise ValueError(f"Subject {self.subject_id}: outcome times must lie in [0, {self.tau}]")

        cov_times = np.asarray(self.covariate_times, dtype=float)
        if len(self.covariate_values) != cov_times.size:
            raise ValueError(f"Subject {self.subject_id}: covariate times and values differ in length")
        if np.any(np.diff(cov_times) <= 0):
            raise ValueError(f"Subject {self.subject_id}: covariate times must be strictly increasing")
        dims = {len(v) for v in self.covariate_values}
        if len(dims) > 1:
            raise ValueError(f"Subject {self.subject_id}: covariate records have mixed dimensions")
        if cov_times.size and not np.all(np.isfinite(np.asarray(self.covariate_values, dtype=float))):
            raise ValueError(f"Subject {self.subject_id}: covariate values must be finite")
        if times.size and (cov_times.size == 0 or cov_times[0] > times[0]):
            raise ValueError(
                f"Subject {self.subject_id}: outcome at t={times[0]} has no covariate record at or before it"
            )
        if self.outcome_covariates is not None and len(self.outcome_covariates) != times.size:
            raise ValueError(f"Subject {self.subject_id}: exact covariates must align with outcomes")
        return self

    def model_post_init(self, __context) -> None:
        self._times = np.asarray(self.outcome_times, dtype=float)
        self._values = np.asarray(self.outcome_values, dtype=float)
        self._cov_times = np.asarray(self.covariate_times, dtype=float)
        dim = len(self.covariate_values[0]) if self.covariate_values else 0
        self._cov_values = np.asarray(self.covariate_values, dtype=float).reshape(
            len(self.covariate_values), dim
        )

    @property
    def times_array(self) -> np.ndarray:
        return self._times

    @property
    def values_array(self) -> np.ndarray:
        return self._values

    @property
    def covariate_times_array(self) -> np.ndarray:
        return self._cov_times

    @property
    def covariate_values_array(self) -> np.ndarray:
        return self._cov_values

    @property
    def num_observations(self) -> int:
        """m_i."""
        return int(self._times.size)

    @property
    def covariate_dim(self) -> int:
        return int(self._cov_values.shape[1])

    def covariate_at(self, t: float | np.ndarray) -> np.ndarray:
        """
        Covariate value(s) by last observation carried forward.

        Returns shape (covariate_dim,) for scalar ``t`` and (len(t), covariate_dim)
        for arrays. Raises DataValidationError when no record precedes ``t``.
        """
        points = np.atleast_1d(np.asarray(t, dtype=float))
        index = np.searchsorted(self._cov_times, points, side="right") - 1
        if np.any(index < 0):
            first = points[index < 0][0]
            raise DataValidationError(
                f"Subject {self.subject_id}: no covariate record at or before t={first}"
            )
        values = self._cov_values[index]
        return values[0] if np.ndim(t) == 0 else values

    def observation_covariates(self, exact: bool = False) -> np.ndarray:
        """Covariates at every outcome time, (m_i, covariate_dim)."""
        if exact and self.outcome_covariates is not None:
            return np.asarray(self.outcome_covariates, dtype=float).reshape(
                self.num_observations, -1
            )
        if self.num_observations == 0:
            return np.zeros((0, self.covariate_dim))
        return self.covariate_at(self._times)


class LongitudinalDataset(BaseModel):
    """A panel of subjects with shared time unit and transform provenance."""

    model_config = ConfigDict(frozen=True)

    subjects: List[LongitudinalSubject] = Field(default_factory=list)
    time_unit: str = "unspecified"
    provenance: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_subjects(self) -> "LongitudinalDataset":
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("Subject ids must be unique")
        dims = {s.covariate_dim for s in self.subjects if s.covariate_times}
        if len(dims) > 1:
            raise ValueError(f"Subjects disagree on covariate dimension: {sorted(dims)}")
        return self

    @property
    def tau(self) -> float:
        """Global domain end, max_i tau_i."""
        return max((s.tau for s in self.subjects), default=0.0)

    @property
    def num_subjects(self) -> int:
        return len(self.subjects)

    @property
    def num_observations(self) -> int:
        """N = sum_i m_i."""
        return sum(s.num_observations for s in self.subjects)

    @property
    def covariate_dim(self) -> int:
        for subject in self.subjects:
            if subject.covariate_times:
                return subject.covariate_dim
        return 0

    def all_times(self) -> np.ndarray:
        if not self.subjects:
            return np.zeros(0)
        return np.concatenate([s.times_array for s in self.subjects])

    def all_values(self) -> np.ndarray:
        if not self.subjects:
            return np.zeros(0)
        return np.concatenate([s.values_array for s in self.subjects])

    def with_subjects(self, subjects: List[LongitudinalSubject], note: Optional[str] = None) -> "LongitudinalDataset":
        provenance = self.provenance + ([note] if note else [])
        return LongitudinalDataset(
            subjects=subjects, time_unit=self.time_unit, provenance=provenance
        )
