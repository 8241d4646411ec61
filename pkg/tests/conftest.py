"""
Shared fixtures: hand-built panels and small simulated panels.
"""

import numpy as np
import pytest

from infpca.io.dataset import LongitudinalDataset, LongitudinalSubject
from infpca.models.config import SimConfig
from infpca.simulation.generator import simulate_dataset


def build_panel(times_list, values_list, tau=3.0, covariates=None):
    """Panel with a covariate record at t = 0 (value 0 unless given) for each subject."""
    subjects = []
    for i, (times, values) in enumerate(zip(times_list, values_list)):
        cov_times, cov_values = [0.0], [[0.0]]
        if covariates is not None:
            cov_times, cov_values = covariates[i]
        subjects.append(
            LongitudinalSubject(
                subject_id=f"s{i}",
                tau=tau,
                outcome_times=list(times),
                outcome_values=list(values),
                covariate_times=list(cov_times),
                covariate_values=[list(v) for v in cov_values],
            )
        )
    return LongitudinalDataset(subjects=subjects)


@pytest.fixture
def panel_factory():
    return build_panel


@pytest.fixture
def smooth_panel():
    """Forty subjects observing 2 + sin(t) plus small noise at random times."""
    rng = np.random.default_rng(11)
    times_list, values_list = [], []
    for _ in range(40):
        times = np.sort(rng.uniform(0.0, 3.0, size=rng.integers(4, 9)))
        times_list.append(times)
        values_list.append(2.0 + np.sin(times) + rng.normal(0.0, 0.05, times.size))
    return build_panel(times_list, values_list)


@pytest.fixture(scope="session")
def sim_config():
    return SimConfig(n=60, seed=3)


@pytest.fixture(scope="session")
def small_sim(sim_config):
    return simulate_dataset(sim_config, replicate=0)
