"""
Tests for the informative-sampling simulator and its closed-form truth.
"""

import numpy as np
import pytest
from scipy import stats

from infpca.core.baseline import BaselineKind
from infpca.io.dataset import LongitudinalDataset, LongitudinalSubject
from infpca.models.config import CovariateDesign, ExperimentArm, RunConfig, SimConfig
from infpca.simulation.experiment import run_replicate
from infpca.simulation.generator import (
    covariate_bound,
    intensity_majorant,
    loadings,
    mise,
    piecewise_majorant,
    simulate_dataset,
    subject_rng,
    true_functions,
    true_weights,
)


class TestSimulateDataset:
    """Reproducibility and structure of simulated panels."""

    def test_same_seed_same_panel(self):
        config = SimConfig(n=10, seed=42)
        assert simulate_dataset(config).model_dump() == simulate_dataset(config).model_dump()

    def test_replicates_differ(self):
        config = SimConfig(n=10, seed=42)
        a = simulate_dataset(config, replicate=0)
        b = simulate_dataset(config, replicate=1)
        assert a.subjects[0].covariate_values != b.subjects[0].covariate_values

    def test_subject_stream_independent_of_n(self):
        """Subject i is the same whether the panel has 5 or 12 subjects."""
        config = SimConfig(seed=7)
        small = simulate_dataset(config, n=5)
        large = simulate_dataset(config, n=12)
        assert [s.model_dump() for s in small.subjects] == [s.model_dump() for s in large.subjects[:5]]

    def test_subject_layout(self, small_sim):
        """Covariates start at t = 0, exact covariates align with visits, outcomes are 5 Z + noise."""
        assert small_sim.num_subjects == 60
        for subject in small_sim.subjects:
            assert subject.covariate_times[0] == 0.0
            assert subject.tau == 3.0
            if subject.num_observations:
                exact = np.asarray(subject.outcome_covariates)[:, 0]
                assert np.all(np.abs(subject.values_array - 5.0 * exact) < 0.6)
                assert np.all(np.abs(exact) <= covariate_bound(SimConfig()))

    def test_rng_streams_distinct(self):
        assert subject_rng(0, 0, 1).random() != subject_rng(0, 0, 2).random()

    @pytest.mark.slow
    def test_mean_visits_near_design(self):
        """The default design averages about 8.3 visits per subject."""
        data = simulate_dataset(SimConfig(n=400, seed=5))
        assert data.num_observations / data.num_subjects == pytest.approx(8.3, abs=0.9)

    def test_homogeneous_counts(self):
        """beta = 0 and a constant baseline c give Poisson(3c) visit counts."""
        config = SimConfig(
            n=2000,
            seed=1,
            beta=0.0,
            baseline_family=BaselineKind.LOG_LINEAR,
            baseline_theta=[np.log(2.0), 0.0],
            thinning_cells=8,
            covariate_grid_points=2,
        )
        counts = np.array([s.num_observations for s in simulate_dataset(config).subjects])
        assert abs(counts.mean() - 6.0) < 3 * np.sqrt(6.0 / counts.size)

    @pytest.mark.slow
    def test_event_times_follow_baseline_density(self):
        """With beta = 0 pooled visit times have density (t + 1/4) / 5.25 on [0, 3]."""
        config = SimConfig(
            n=10000, seed=9, beta=0.0, baseline_theta=[2.0, 0.25], thinning_cells=64, covariate_grid_points=2
        )
        times = np.concatenate([s.times_array for s in simulate_dataset(config).subjects])
        assert times.size >= 100_000
        cdf = lambda t: (0.5 * t**2 + 0.25 * t) / 5.25  # noqa: E731
        assert stats.kstest(times, cdf).pvalue > 0.01

    def test_grid_covariate_record(self, small_sim):
        """The default record is an equally spaced grid over the follow-up."""
        expected = np.linspace(0.0, 3.0, 301)
        for subject in small_sim.subjects[:5]:
            np.testing.assert_array_equal(subject.covariate_times_array, expected)

    def test_random_covariate_record(self):
        """The random design records t = 0 plus about covariate_rate uniform times."""
        config = SimConfig(n=200, seed=4, covariate_design=CovariateDesign.RANDOM, covariate_rate=10.0)
        data = simulate_dataset(config)
        counts = np.array([len(s.covariate_times) for s in data.subjects])
        assert all(s.covariate_times[0] == 0.0 for s in data.subjects)
        assert abs(counts.mean() - 11.0) < 3 * np.sqrt(10.0 / counts.size)


class TestMajorants:
    """Thinning bounds."""

    def test_piecewise_bound_dominates_rate(self):
        """The per-cell bound stays above the intensity everywhere inside the cell."""
        config = SimConfig()
        edges = np.linspace(0.0, 3.0, 33)
        dense = np.linspace(0.0, 3.0, 3201)
        latent = lambda t: np.sin(4.0 * t)  # noqa: E731, Lipschitz constant 4
        bound = piecewise_majorant(config, edges, latent(edges), lipschitz=4.0)
        rate = 0.0815 * (dense + 0.25) * np.exp(3.0 * latent(dense))
        cell = np.clip(np.searchsorted(edges, dense, side="right") - 1, 0, bound.size - 1)
        assert np.all(rate <= bound[cell] * (1 + 1e-12))
        assert np.all(bound <= intensity_majorant(config))

    def test_covariate_bound_formula(self):
        """Z_bound = 1 + sqrt(2) sum |nu_k| when tau = 3."""
        expected = 1.0 + np.sqrt(2.0) * np.sum(1.0 / (np.arange(1, 51) + 1))
        assert covariate_bound(SimConfig()) == pytest.approx(expected)

    def test_loadings_alternate(self):
        np.testing.assert_allclose(loadings(3), [0.5, -1 / 3, 0.25])


class TestTruth:
    """Closed-form mean, covariance and eigenpair."""

    def test_mean_and_covariance(self):
        truth = true_functions(SimConfig())
        assert truth.mu(np.array([0.0]))[0] == pytest.approx(5.0 * np.sin(0.5))
        expected = 25.0 * (2.0 / 3.0) * np.sum(1.0 / (np.arange(1, 51) + 1) ** 2)
        assert truth.cov(np.array([0.0]), np.array([0.0]))[0, 0] == pytest.approx(expected)
        assert expected == pytest.approx(50.0 / 3.0 * (np.pi**2 / 6 - 1), rel=0.05)

    def test_leading_eigenpair(self):
        """kappa_1 = 25/4 with phi_1 = sqrt(2/3) cos(pi t), unit L2 norm."""
        truth = true_functions(SimConfig())
        assert truth.kappa1 == pytest.approx(6.25)
        grid = np.linspace(0.0, 3.0, 3001)
        phi = truth.phi1(grid)
        assert np.trapezoid(phi**2, grid) == pytest.approx(1.0, rel=1e-5)
        assert np.all(np.diff(truth.eigenvalues) <= 0)

    def test_true_weights_zero_covariate(self):
        """With Z = 0 the true weight is 4e4 / (t + 1/4)."""
        config = SimConfig(baseline_theta=[1 / 4e4, 0.25])
        subject = LongitudinalSubject(
            subject_id="a",
            tau=3.0,
            outcome_times=[1.0],
            outcome_values=[0.0],
            covariate_times=[0.0],
            covariate_values=[[5.0]],
            outcome_covariates=[[0.0]],
        )
        weights = true_weights(config, LongitudinalDataset(subjects=[subject]))
        assert weights[0][0] == pytest.approx(4e4 / 1.25)


class TestMise:
    """Trapezoid integrated squared error."""

    def test_constant_offset(self):
        grid = np.linspace(0.0, 3.0, 31)
        assert mise(np.ones(31), np.zeros(31), grid) == pytest.approx(3.0)
        assert mise(np.ones((31, 31)), np.zeros((31, 31)), grid) == pytest.approx(9.0)

    def test_shape_mismatch(self):
        grid = np.linspace(0.0, 3.0, 31)
        with pytest.raises(ValueError):
            mise(np.ones(31), np.zeros(30), grid)
        with pytest.raises(ValueError):
            mise(np.ones(20), np.zeros(20), grid)


class TestMeasurementNoise:
    """The covariance fit uses only pairs of distinct visits."""

    @pytest.mark.slow
    def test_covariance_error_insensitive_to_noise(self):
        """MISE of the covariance barely moves when the noise variance grows from 0 to 0.25."""
        errors = []
        for noise_var in (0.0, 0.25):
            config = RunConfig(
                command="experiment", arms=[ExperimentArm.TW], sim=SimConfig(n=150, seed=6, noise_var=noise_var)
            )
            (result,) = run_replicate(config, n=150, replicate=0)
            assert result.ok, result.error
            errors.append(result.mise_cov)
        assert errors[1] == pytest.approx(errors[0], rel=0.3)
