"""
Tests for the proportional intensity model, its likelihood and the inverse-intensity weights.
"""

import numpy as np
import pytest

from infpca.core.baseline import BaselineKind
from infpca.core.errors import ConvergenceError, DataValidationError, DomainError, WeightError
from infpca.core.intensity import (
    CovariateMap,
    CovariateMapKind,
    IntensityModel,
    build_likelihood_design,
    fit_intensity,
    intensity_at,
    mean_weights,
    neg_log_likelihood,
    neg_log_likelihood_grad,
    observed_information,
    ordered_pairs,
    pair_weights,
    product_pair_weights,
)
from infpca.io.dataset import LongitudinalDataset, LongitudinalSubject
from infpca.models.config import SimConfig
from infpca.simulation.generator import simulate_dataset, true_intensity_model


@pytest.fixture
def homogeneous_panel(panel_factory):
    """Visits from a rate-2 Poisson process, no covariate effect."""
    rng = np.random.default_rng(5)
    times_list = []
    for _ in range(80):
        count = rng.poisson(6.0)
        times_list.append(np.unique(rng.uniform(0.01, 3.0, size=count)))
    return panel_factory(times_list, [np.zeros(t.size) for t in times_list])


def _zero_covariate_subject(times):
    return LongitudinalSubject(
        subject_id="z",
        tau=3.0,
        outcome_times=list(times),
        outcome_values=[0.0] * len(times),
        covariate_times=[0.0],
        covariate_values=[[0.0]],
    )


class TestIntensityModel:
    """Parameter container behaviour."""

    def test_theta_length_checked(self):
        with pytest.raises(ValueError):
            IntensityModel(family=BaselineKind.LINEAR_SHIFT, theta=[1.0])

    def test_json_round_trip(self):
        """A model survives serialization with its covariate map."""
        model = IntensityModel(
            family=BaselineKind.LOG_LINEAR,
            theta=[0.1, -0.2],
            beta=[0.5],
            covariate_map=CovariateMap(scale=2.0),
        )
        restored = IntensityModel.from_json(model.to_json())
        np.testing.assert_allclose(restored.params_array, model.params_array)
        assert restored.covariate_map.scale == 2.0
        assert restored.parameter_names == ["theta_0", "theta_1", "beta_0"]

    def test_standard_errors_without_information(self):
        model = IntensityModel(family=BaselineKind.LOG_LINEAR, theta=[0.0, 0.0])
        assert model.standard_errors() is None

    def test_intensity_at_zero_covariate(self):
        """With Z = 0 the intensity reduces to (t + 1/4) / 4e4."""
        model = IntensityModel(family=BaselineKind.LINEAR_SHIFT, theta=[1 / 4e4, 0.25], beta=[3.0])
        subject = _zero_covariate_subject([1.0])
        assert intensity_at(model, subject, 1.0) == pytest.approx(1.25 / 4e4)

    def test_covariate_map_none(self):
        mapping = CovariateMap(kind=CovariateMapKind.NONE)
        assert mapping.output_dim(3) == 0
        assert mapping.apply(np.ones((4, 3))).shape == (4, 0)


class TestLikelihood:
    """Negative log-likelihood, gradient and information."""

    def test_quadrature_covers_follow_up(self, small_sim):
        """Compensator weights of each subject sum to its follow-up length."""
        design = build_likelihood_design(small_sim, CovariateMap())
        assert design.node_weights.sum() == pytest.approx(small_sim.num_subjects * 3.0, rel=1e-12)
        assert design.num_events == small_sim.num_observations

    def test_empty_dataset(self):
        """No subjects gives a zero likelihood contribution."""
        data = LongitudinalDataset(subjects=[])
        value = neg_log_likelihood(np.array([1.0, 1.0]), data, covariate_map=CovariateMap(kind=CovariateMapKind.NONE))
        assert value == 0.0

    def test_gradient_matches_finite_differences(self, small_sim):
        """Analytic gradient agrees with central differences."""
        design = build_likelihood_design(small_sim, CovariateMap())
        params = np.array([0.07, 0.3, 2.7])
        analytic = neg_log_likelihood_grad(params, design)
        for k in range(params.size):
            h = 1e-6 * max(1.0, abs(params[k]))
            step = np.zeros_like(params)
            step[k] = h
            numeric = (neg_log_likelihood(params + step, design) - neg_log_likelihood(params - step, design)) / (2 * h)
            assert analytic[k] == pytest.approx(numeric, rel=1e-5, abs=1e-3)

    def test_gradient_at_random_points(self, small_sim):
        """Central differences agree with the analytic gradient across the parameter space."""
        design = build_likelihood_design(small_sim, CovariateMap())
        rng = np.random.default_rng(21)
        for _ in range(10):
            params = np.array([rng.uniform(0.03, 0.15), rng.uniform(0.1, 0.5), rng.uniform(1.0, 4.0)])
            analytic = neg_log_likelihood_grad(params, design)
            for k in range(params.size):
                h = 1e-6 * max(1.0, abs(params[k]))
                step = np.zeros_like(params)
                step[k] = h
                numeric = (neg_log_likelihood(params + step, design) - neg_log_likelihood(params - step, design)) / (2 * h)
                assert analytic[k] == pytest.approx(numeric, rel=1e-5, abs=1e-3)

    @pytest.mark.parametrize("scale", [0.4, 2.5])
    def test_scaling_g_rescales_beta(self, small_sim, scale):
        """Multiplying g by c and beta by 1/c leaves the likelihood unchanged."""
        params = np.array([0.07, 0.3, 2.7])
        rescaled = np.array([0.07, 0.3, 2.7 / scale])
        expected = neg_log_likelihood(params, small_sim)
        value = neg_log_likelihood(rescaled, small_sim, covariate_map=CovariateMap(scale=scale))
        assert value == pytest.approx(expected, rel=1e-12, abs=1e-10)

    def test_event_rows_use_visit_covariates(self, small_sim):
        """Events carry Z measured at the visit; the carried-forward record is the fallback."""
        exact = build_likelihood_design(small_sim, CovariateMap())
        carried = build_likelihood_design(small_sim, CovariateMap(), exact_covariates=False)
        visits = np.concatenate([np.asarray(s.outcome_covariates)[:, 0] for s in small_sim.subjects if s.num_observations])
        np.testing.assert_array_equal(exact.event_g[:, 0], visits)
        recorded = np.concatenate([s.covariate_at(s.times_array)[:, 0] for s in small_sim.subjects if s.num_observations])
        np.testing.assert_array_equal(carried.event_g[:, 0], recorded)
        np.testing.assert_array_equal(exact.node_g, carried.node_g)

    def test_late_first_covariate_rejected(self):
        """The compensator starts at 0, so a first covariate record after 0 is a data error."""
        subject = LongitudinalSubject(
            subject_id="late",
            tau=3.0,
            outcome_times=[1.0],
            outcome_values=[0.0],
            covariate_times=[0.5],
            covariate_values=[[0.0]],
        )
        with pytest.raises(DataValidationError, match="late"):
            build_likelihood_design(LongitudinalDataset(subjects=[subject]), CovariateMap())

    def test_information_matches_gradient_differences(self, small_sim):
        """Observed information is the Jacobian of the gradient."""
        design = build_likelihood_design(small_sim, CovariateMap())
        params = np.array([0.07, 0.3, 2.7])
        information = observed_information(params, design)
        for k in range(params.size):
            h = 1e-6 * max(1.0, abs(params[k]))
            step = np.zeros_like(params)
            step[k] = h
            column = (neg_log_likelihood_grad(params + step, design) - neg_log_likelihood_grad(params - step, design)) / (2 * h)
            np.testing.assert_allclose(information[:, k], column, rtol=1e-4, atol=1e-2)
        np.testing.assert_allclose(information, information.T)

    def test_truth_beats_perturbed_beta(self):
        """The generating parameters have higher likelihood than beta = 2.5."""
        config = SimConfig(n=150, seed=8)
        data = simulate_dataset(config)
        truth = true_intensity_model(config).params_array
        perturbed = truth.copy()
        perturbed[-1] = 2.5
        assert neg_log_likelihood(truth, data) < neg_log_likelihood(perturbed, data)


class TestFitIntensity:
    """Maximum likelihood fitting."""

    def test_score_equation_log_linear(self, homogeneous_panel):
        """At the optimum the fitted compensator equals the event count."""
        mapping = CovariateMap(kind=CovariateMapKind.NONE)
        model = fit_intensity(homogeneous_panel, family=BaselineKind.LOG_LINEAR, covariate_map=mapping, tol=1e-6)
        design = build_likelihood_design(homogeneous_panel, mapping)
        compensator = design.node_weights @ model.baseline.evaluate(design.node_times, model.theta_array)
        assert compensator == pytest.approx(design.num_events, abs=1e-3)
        assert model.fitted
        assert model.convergence.converged
        assert model.beta == []
        # homogeneous truth: slope near zero, level near log(2)
        assert abs(model.theta[1]) < 0.3
        assert model.theta[0] == pytest.approx(np.log(2.0), abs=0.3)

    def test_information_positive_definite(self, homogeneous_panel):
        mapping = CovariateMap(kind=CovariateMapKind.NONE)
        model = fit_intensity(homogeneous_panel, family=BaselineKind.LOG_LINEAR, covariate_map=mapping)
        assert np.linalg.eigvalsh(np.asarray(model.information)).min() > 0
        assert np.all(model.standard_errors() > 0)

    @pytest.mark.slow
    def test_recovers_beta(self):
        """beta_hat lands near the generating value 3."""
        data = simulate_dataset(SimConfig(n=200, seed=1))
        model = fit_intensity(data)
        assert model.beta[0] == pytest.approx(3.0, abs=0.3)
        assert model.theta[0] > 0 and model.theta[1] > 0

    def test_no_events_rejected(self):
        data = LongitudinalDataset(subjects=[LongitudinalSubject(subject_id="a", tau=1.0)])
        with pytest.raises(DataValidationError):
            fit_intensity(data, covariate_map=CovariateMap(kind=CovariateMapKind.NONE))

    def test_wrong_init_length(self, homogeneous_panel):
        with pytest.raises(ValueError):
            fit_intensity(homogeneous_panel, family=BaselineKind.LOG_LINEAR, init=[0.0, 0.0, 0.0, 0.0])

    def test_nonpositive_start_rejected(self, homogeneous_panel):
        """A starting baseline that is negative on [0, tau] fails before optimizing."""
        with pytest.raises(DomainError, match="not strictly positive"):
            fit_intensity(
                homogeneous_panel,
                family=BaselineKind.LINEAR_SHIFT,
                covariate_map=CovariateMap(kind=CovariateMapKind.NONE),
                init=[1.0, -0.5],
            )

    def test_unreachable_tolerance_raises(self, homogeneous_panel):
        """Both optimizer attempts failing surfaces the last iterate."""
        with pytest.raises(ConvergenceError) as info:
            fit_intensity(
                homogeneous_panel,
                family=BaselineKind.LOG_LINEAR,
                covariate_map=CovariateMap(kind=CovariateMapKind.NONE),
                tol=1e-300,
                max_iter=2,
            )
        assert info.value.last_iterate.shape == (2,)


class TestWeights:
    """Inverse-intensity weights."""

    def test_weight_is_reciprocal_intensity(self):
        """Z = 0 at t gives weight 4e4 / (t + 1/4)."""
        model = IntensityModel(family=BaselineKind.LINEAR_SHIFT, theta=[1 / 4e4, 0.25], beta=[3.0])
        data = LongitudinalDataset(subjects=[_zero_covariate_subject([0.5, 2.0])])
        weights = mean_weights(model, data)
        np.testing.assert_allclose(weights[0], 4e4 / (np.array([0.5, 2.0]) + 0.25))

    def test_exact_covariates_preferred(self, small_sim, sim_config):
        """TW-style weights use the exact Z(t_ij) recorded by the simulator."""
        model = true_intensity_model(sim_config)
        exact = mean_weights(model, small_sim, exact_covariates=True)
        index = next(i for i, s in enumerate(small_sim.subjects) if s.num_observations)
        subject = small_sim.subjects[index]
        z = np.asarray(subject.outcome_covariates)[:, 0]
        expected = 1.0 / (0.0815 * (subject.times_array + 0.25) * np.exp(3.0 * z))
        np.testing.assert_allclose(exact[index], expected, rtol=1e-12)

    def test_overflow_raises_weight_error(self):
        """An infinite intensity gives a zero weight, which is rejected."""
        model = IntensityModel(family=BaselineKind.LOG_LINEAR, theta=[0.0, 0.0], beta=[1000.0])
        subject = LongitudinalSubject(
            subject_id="hot",
            tau=1.0,
            outcome_times=[0.5],
            outcome_values=[1.0],
            covariate_times=[0.0],
            covariate_values=[[1.0]],
        )
        with pytest.raises(WeightError) as info:
            mean_weights(model, LongitudinalDataset(subjects=[subject]))
        assert info.value.subject_id == "hot"
        assert info.value.time == 0.5

    def test_truncation_caps_weights(self, small_sim, sim_config):
        model = true_intensity_model(sim_config)
        raw = np.concatenate(mean_weights(model, small_sim))
        capped = np.concatenate(mean_weights(model, small_sim, truncate_quantile=0.9))
        assert capped.max() == pytest.approx(np.quantile(raw, 0.9))
        assert np.all(capped <= raw)

    def test_ordered_pairs(self):
        """All ordered pairs j != l, row-major."""
        j, l = ordered_pairs(3)
        assert list(zip(j, l)) == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
        assert ordered_pairs(1)[0].size == 0

    def test_pair_weights_are_products(self, small_sim, sim_config):
        model = true_intensity_model(sim_config)
        singles = mean_weights(model, small_sim)
        pairs = pair_weights(model, small_sim)
        for w, pw in zip(singles, pairs):
            assert pw.size == w.size * (w.size - 1)
        np.testing.assert_allclose(product_pair_weights([np.array([1.0, 2.0, 4.0])])[0], [2, 4, 2, 8, 4, 8])
