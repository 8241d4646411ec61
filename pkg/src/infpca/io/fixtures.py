"""
Synthetic clinical cohort shaped like an early-HIV follow-up study.

Patients are scheduled at weeks 2, 4, 12 and every 12 weeks through week 96,
but add visits when their viral load is high. Outcomes are raw CD4-like
counts (analyzed on the square-root scale) and the covariate is a raw
viral-load-like value (analyzed on the log scale). Time is in months.
"""

import numpy as np

from infpca.io.dataset import LongitudinalDataset, LongitudinalSubject

WEEKS_PER_MONTH = 52.0 / 12.0
PROTOCOL_WEEKS = np.array([2.0, 4.0, 12.0, *range(24, 97, 12)])


def make_cohort_fixture(
    num_subjects: int = 37,
    min_visits: int = 15,
    follow_up: float = 24.0,
    seed: int = 2024,
) -> LongitudinalDataset:
    """
    Cohort with at least ``min_visits`` visits per patient.

    Viral load is recorded at baseline (t = 0) and at every visit; CD4 at every visit.
    """
    rng = np.random.default_rng(seed)
    protocol = PROTOCOL_WEEKS / WEEKS_PER_MONTH
    subjects = []
    for i in range(num_subjects):
        # log10 viral load decays from a set point under therapy
        set_point = rng.normal(5.0, 0.5)
        floor = rng.normal(2.0, 0.4)
        decay = rng.uniform(1.5, 4.0)

        def log_load(t: np.ndarray) -> np.ndarray:
            return floor + (set_point - floor) * np.exp(-np.asarray(t) / decay)

        jitter = rng.normal(0.0, 0.15, size=protocol.size)
        scheduled = np.clip(protocol + jitter, 0.05, follow_up)

        # extra visits, more frequent while viral load is high
        grid = np.linspace(0.0, follow_up, 481)
        rate = 0.15 * np.exp(0.6 * (log_load(grid) - 3.0))
        extra = grid[1:][rng.random(grid.size - 1) < rate[1:] * np.diff(grid)]
        times = np.unique(np.round(np.concatenate([scheduled, extra]), 6))
        while times.size < min_visits:
            times = np.unique(np.round(np.append(times, rng.uniform(0.05, follow_up)), 6))

        baseline_cd4 = rng.normal(20.0, 3.0)
        slope = rng.normal(0.25, 0.08)
        sqrt_cd4 = baseline_cd4 + slope * times - 1.2 * (log_load(times) - 3.0) + rng.normal(0.0, 1.0, times.size)
        cd4 = np.clip(sqrt_cd4, 1.0, None) ** 2

        cov_times = np.concatenate([[0.0], times])
        load = 10.0 ** (log_load(cov_times) + rng.normal(0.0, 0.2, cov_times.size))

        subjects.append(
            LongitudinalSubject(
                subject_id=f"P{i + 1:03d}",
                tau=follow_up,
                outcome_times=times.tolist(),
                outcome_values=np.round(cd4).tolist(),
                covariate_times=cov_times.tolist(),
                covariate_values=load[:, None].tolist(),
            )
        )
    return LongitudinalDataset(
        subjects=subjects,
        time_unit="months",
        provenance=[f"synthetic cohort fixture: seed={seed}, n={num_subjects}"],
    )
