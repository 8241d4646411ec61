"""
Tests for the weighted penalized-spline mean estimator and its GCV selection.
"""

import numpy as np
import pytest

from infpca.core.bspline import build_basis, penalty_mean
from infpca.core.errors import RankDeficiencyError
from infpca.core.mean import (
    MeanFit,
    MeanSmoother,
    default_lambda_grid,
    evaluate_mean,
    evaluate_mean_grid,
    fit_mean,
    fit_mean_gcv,
    flatten_weights,
    gcv_select_mean,
)


@pytest.fixture
def basis():
    return build_basis(3.0, 5)


def _dense_oracle(data, weights, basis, lam):
    """Coefficients and GCV from the full N x N hat matrix."""
    design = basis.design_matrix(data.all_times())
    y = data.all_values()
    w = np.asarray(weights, dtype=float)
    system = design.T @ (w[:, None] * design) + 0.5 * lam * penalty_mean(basis, 2)
    coef = np.linalg.solve(system, design.T @ (w * y))
    root = np.sqrt(w)
    hat = (root[:, None] * design) @ np.linalg.solve(system, (root[:, None] * design).T)
    residual = root * y - hat @ (root * y)
    n = y.size
    gcv = (residual @ residual / n) / (np.trace(np.eye(n) - hat) / n) ** 2
    return coef, gcv


def _relabel(panel, flat_values, panel_factory):
    """Same visit times with new outcome values."""
    counts = [s.num_observations for s in panel.subjects]
    values = np.split(np.asarray(flat_values), np.cumsum(counts)[:-1])
    return panel_factory([s.times_array for s in panel.subjects], values)


class TestMeanFit:
    """Fixed-lambda fits."""

    def test_matches_dense_solution(self, smooth_panel, basis):
        """Coefficients and GCV agree with the dense hat-matrix computation."""
        rng = np.random.default_rng(2)
        weights = rng.uniform(0.5, 2.0, smooth_panel.num_observations)
        fit = fit_mean(smooth_panel, weights, basis, lambda_mu=0.1)
        coef, gcv = _dense_oracle(smooth_panel, weights, basis, 0.1)
        np.testing.assert_allclose(fit.gamma_array, coef, rtol=1e-8, atol=1e-10)
        assert fit.gcv_score == pytest.approx(gcv, rel=1e-8)

    def test_linear_truth_reproduced(self, panel_factory, basis):
        """Linear data lie in the penalty null space and are fitted exactly at any lambda."""
        times = [np.array([0.2, 1.0, 2.5]), np.array([0.5, 1.7, 2.9]), np.array([0.1, 1.4])]
        data = panel_factory(times, [2.0 + 0.5 * t for t in times])
        fit = fit_mean(data, None, basis, lambda_mu=1e3)
        grid = np.linspace(0.0, 3.0, 31)
        np.testing.assert_allclose(evaluate_mean_grid(fit, grid), 2.0 + 0.5 * grid, atol=1e-8)

    def test_weight_scaling_matches_lambda_scaling(self, smooth_panel, basis):
        """Weights times c at lambda c give the same curve as weights at lambda."""
        plain = fit_mean(smooth_panel, None, basis, lambda_mu=0.2)
        scaled = fit_mean(smooth_panel, np.full(smooth_panel.num_observations, 7.0), basis, lambda_mu=1.4)
        np.testing.assert_allclose(plain.gamma_array, scaled.gamma_array, rtol=1e-8)

    def test_zero_weights_drop_observations(self, panel_factory, basis):
        """An observation with weight zero does not move the fit."""
        times = [np.array([0.3, 1.1, 2.2]), np.array([0.6, 1.5, 2.8])]
        values = [np.array([1.0, 2.0, 1.5]), np.array([1.2, 1.8, 1.1])]
        full = panel_factory(times, values)
        outlier = panel_factory(times, [values[0], np.array([1.2, 50.0, 1.1])])
        weights = [np.ones(3), np.array([1.0, 0.0, 1.0])]
        a = fit_mean(full, weights, basis, lambda_mu=0.5)
        b = fit_mean(outlier, weights, basis, lambda_mu=0.5)
        np.testing.assert_allclose(a.gamma_array, b.gamma_array, atol=1e-10)

    def test_single_time_is_rank_deficient(self, panel_factory, basis):
        """All observations at one time leave the linear null space unidentified."""
        data = panel_factory([[1.0], [1.0], [1.0]], [[1.0], [2.0], [3.0]])
        with pytest.raises(RankDeficiencyError) as info:
            fit_mean(data, None, basis, lambda_mu=1.0)
        assert info.value.directions.shape[1] >= 1
        with pytest.raises(ValueError):
            fit_mean_gcv(data, None, basis)

    def test_invalid_inputs(self, smooth_panel, basis):
        with pytest.raises(ValueError):
            fit_mean(smooth_panel, None, basis, lambda_mu=0.0)
        with pytest.raises(ValueError):
            fit_mean(smooth_panel, -np.ones(smooth_panel.num_observations), basis, lambda_mu=1.0)
        with pytest.raises(ValueError):
            fit_mean(smooth_panel, None, basis, lambda_mu=1.0, penalty_order=4)

    def test_flatten_weights_shapes(self, smooth_panel):
        """Per-subject lists and flat vectors give the same weights."""
        per_subject = [np.full(s.num_observations, 2.0) for s in smooth_panel.subjects]
        np.testing.assert_allclose(flatten_weights(smooth_panel, per_subject), 2.0)
        assert flatten_weights(smooth_panel, None).size == smooth_panel.num_observations
        with pytest.raises(ValueError):
            flatten_weights(smooth_panel, per_subject[:-1])

    def test_fit_is_callable_and_serializable(self, smooth_panel, basis):
        fit = fit_mean(smooth_panel, None, basis, lambda_mu=0.1)
        assert fit(1.0) == pytest.approx(evaluate_mean(fit, 1.0))
        restored = MeanFit.model_validate_json(fit.model_dump_json())
        np.testing.assert_allclose(restored(np.array([0.5, 2.5])), fit(np.array([0.5, 2.5])))
        assert fit.smoothing_bound == pytest.approx(0.1 * basis.num_basis**3)


class TestMeanGcv:
    """Smoothing parameter selection."""

    def test_selected_lambda_minimizes_scores(self, smooth_panel, basis):
        grid = np.geomspace(1e-6, 1e2, 25)
        lam, scores = gcv_select_mean(smooth_panel, None, basis, grid)
        assert lam == pytest.approx(grid[np.argmin(scores)])
        assert scores.shape == grid.shape

    def test_gcv_fit_tracks_truth(self, smooth_panel, basis):
        """The GCV fit stays close to 2 + sin(t)."""
        fit = fit_mean_gcv(smooth_panel, None, basis)
        grid = np.linspace(0.0, 3.0, 61)
        assert np.max(np.abs(fit(grid) - (2.0 + np.sin(grid)))) < 0.1
        assert 0 < fit.effective_df <= basis.num_basis

    def test_default_grid_scaled(self, smooth_panel, basis):
        """Default grid has 40 log-spaced points spanning twelve decades."""
        grid = default_lambda_grid(smooth_panel, None, basis)
        assert grid.size == 40
        assert grid[-1] / grid[0] == pytest.approx(1e12)

    def test_empty_grid_rejected(self, smooth_panel, basis):
        with pytest.raises(ValueError):
            gcv_select_mean(smooth_panel, None, basis, [])

    def test_roughness_nonincreasing_in_lambda(self, smooth_panel, basis):
        """gamma^T Q gamma never grows as lambda_mu increases."""
        smoother = MeanSmoother(smooth_panel, basis)
        roughness = [smoother.solve(lam).penalty_value for lam in np.geomspace(1e-6, 1e4, 30)]
        assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(roughness, roughness[1:]))

    def test_structureless_outcomes_select_largest_lambda(self, smooth_panel, basis, panel_factory):
        """Noise with no component in the spline space picks the heaviest smoothing."""
        rng = np.random.default_rng(31)
        design = basis.design_matrix(smooth_panel.all_times())
        noise = rng.normal(size=design.shape[0])
        coef, *_ = np.linalg.lstsq(design, noise, rcond=None)
        data = _relabel(smooth_panel, noise - design @ coef, panel_factory)
        grid = default_lambda_grid(data, None, basis)
        lam, _ = gcv_select_mean(data, None, basis, grid)
        assert lam == pytest.approx(grid[-1])

    def test_exact_spline_selects_smallest_lambda(self, smooth_panel, basis, panel_factory):
        """Noise-free values of a curved spline pick the lightest smoothing."""
        coef = np.random.default_rng(32).normal(size=basis.num_basis)
        data = _relabel(smooth_panel, basis.design_matrix(smooth_panel.all_times()) @ coef, panel_factory)
        grid = default_lambda_grid(data, None, basis)
        lam, _ = gcv_select_mean(data, None, basis, grid)
        assert lam == pytest.approx(grid[0])
