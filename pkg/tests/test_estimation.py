# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from concurrent.futures import ThreadPoolExecutor
import math

import numpy as np
import pytest
from unittest.mock import patch

from fracslow.dynamics import example2
from fracslow.errors import EstimationError, ParameterError
from fracslow.estimation import (
    EstimationProblem,
    EstimationResult,
    error_bound_report,
    error_terms,
    estimate,
    golden_section,
    grad_d_g,
    minimize_over_range,
    objective,
    objective_stats,
    synthesize_observations,
)

SEEDS = [101, 102, 103, 104]


@pytest.fixture(scope="module")
def full_observations(model):
    return synthesize_observations(model, 1.0, SEEDS, [2.0], 1.0, 2e-3)


@pytest.fixture(scope="module")
def reduced_observations(model):
    return synthesize_observations(model, 1.0, SEEDS[:2], [2.0], 0.5, 2e-3, source="reduced")


def _problem(model, observations, **kwargs):
    kwargs.setdefault("n_mc", len(observations))
    return EstimationProblem(model=model, lambda_range=(0.2, 2.0), observations=observations, v0=np.array([2.0]), **kwargs)


class TestMinimizer:
    def test_quadratic_minimum(self):
        result = minimize_over_range(lambda x: (x - 0.7) ** 2, 0.0, 2.0, grid_n=11, refine_iters=40)
        assert result.x_best == pytest.approx(0.7, abs=1e-6)
        assert result.f_best <= 1e-12

    def test_minimum_on_the_boundary(self):
        result = minimize_over_range(lambda x: x, 0.0, 1.0, grid_n=5, refine_iters=10)
        assert result.x_best == 0.0

    def test_executor_gives_same_answer(self):
        with ThreadPoolExecutor(max_workers=3) as pool:
            threaded = minimize_over_range(lambda x: (x - 1.3) ** 2, 0.0, 2.0, grid_n=9, refine_iters=20, executor=pool)
        serial = minimize_over_range(lambda x: (x - 1.3) ** 2, 0.0, 2.0, grid_n=9, refine_iters=20)
        assert threaded.x_best == serial.x_best
        assert threaded.evaluations == serial.evaluations

    def test_every_evaluation_recorded(self):
        result = minimize_over_range(lambda x: abs(x - 0.25), 0.0, 1.0, grid_n=5, refine_iters=7)
        assert len(result.evaluations) == 5 + 2 + 7

    def test_small_grid_rejected(self):
        with pytest.raises(ParameterError):
            minimize_over_range(lambda x: x, 0.0, 1.0, grid_n=4)

    def test_non_finite_value_names_d(self):
        with pytest.raises(EstimationError) as excinfo:
            minimize_over_range(lambda x: math.nan if x > 0.5 else x, 0.0, 1.0, grid_n=5)
        assert excinfo.value.d == 0.75

    def test_golden_section_shrinks_bracket(self):
        seen = golden_section(lambda x: (x - 0.3) ** 2, 0.0, 1.0, 30)
        best = min(seen, key=lambda e: e[1])
        assert best[0] == pytest.approx(0.3, abs=1e-5)


class TestProblem:
    def test_range_must_be_ordered(self, model, reduced_observations):
        with pytest.raises(ParameterError):
            EstimationProblem(model=model, lambda_range=(2.0, 0.2), observations=reduced_observations, n_mc=2, v0=np.array([2.0]))

    def test_needs_observations(self, model):
        with pytest.raises(ParameterError):
            EstimationProblem(model=model, lambda_range=(0.2, 2.0), observations=[], n_mc=2, v0=np.array([2.0]))

    def test_needs_realizations(self, model, reduced_observations):
        with pytest.raises(ParameterError):
            _problem(model, reduced_observations, n_mc=0)

    def test_lyapunov_perron_needs_a_past_window(self, model, reduced_observations):
        with pytest.raises(ParameterError):
            _problem(model, reduced_observations, manifold_mode="lyapunov_perron")

    def test_shared_seeds_pair_realizations_with_observations(self, model, reduced_observations):
        p = _problem(model, reduced_observations, n_mc=4)
        assert [seed for _, seed in p.pairs()] == [101, 102, 101, 102]

    def test_independent_seeds_differ_from_observations(self, model, reduced_observations):
        p = _problem(model, reduced_observations, n_mc=2, shared_seeds=False, mc_seed=5)
        seeds = [seed for _, seed in p.pairs()]
        assert len(set(seeds)) == 2
        assert not set(seeds) & set(SEEDS)

    def test_noise_is_cached(self, model, reduced_observations):
        p = _problem(model, reduced_observations)
        assert p.noise(101) is p.noise(101)

    def test_grid_from_observations(self, model, reduced_observations):
        p = _problem(model, reduced_observations)
        assert p.T == pytest.approx(0.5)
        assert p.dt == pytest.approx(2e-3)


class TestObjective:
    def test_zero_at_truth_with_same_seeds(self, model, reduced_observations):
        p = _problem(model, reduced_observations)
        assert objective(p, 1.0) == 0.0

    def test_positive_away_from_truth(self, model, reduced_observations):
        p = _problem(model, reduced_observations)
        stats = objective_stats(p, 1.5)
        assert stats.mean > 0.0
        assert stats.values.shape == (2,)
        assert stats.stderr >= 0.0

    def test_outside_range_rejected(self, model, reduced_observations):
        p = _problem(model, reduced_observations)
        with pytest.raises(ParameterError):
            objective(p, 3.0)


class TestEstimate:
    def test_recovers_true_parameter(self, model, full_observations):
        p = _problem(model, full_observations)
        with patch("fracslow.estimation.logger"):
            result = estimate(p, grid_n=11, refine_iters=30)
        assert abs(result.d_hat - 1.0) <= 0.1
        assert 0.2 <= result.d_hat <= 2.0
        assert result.F_min == pytest.approx(result.objective_curve[:, 1].min())
        assert np.all(np.diff(result.objective_curve[:, 0]) > 0)
        assert result.error_components is not None
        assert result.diagnostics["evaluations"] == 11 + 2 + 30

    def test_small_grid_rejected(self, model, reduced_observations):
        with pytest.raises(ParameterError):
            estimate(_problem(model, reduced_observations), grid_n=3)


def _recovery_error(m, n_mc, grid_n=21, refine_iters=40):
    obs = synthesize_observations(m, 1.0, list(range(n_mc)), [2.0], 2.0, 2e-3)
    with patch("fracslow.estimation.logger"):
        result = estimate(_problem(m, obs), grid_n=grid_n, refine_iters=refine_iters)
    return abs(result.d_hat - 1.0)


def _single_realization_spread(m, n=10):
    # standard deviation of d_hat fitted to one realization at a time
    obs = synthesize_observations(m, 1.0, list(range(n)), [2.0], 2.0, 2e-3)
    with patch("fracslow.estimation.logger"):
        fits = [estimate(_problem(m, [o]), grid_n=11, refine_iters=30).d_hat for o in obs]
    return float(np.std(fits, ddof=1))


def _monte_carlo_slack(spread, n_mc):
    # two standard errors, floored at the O(eps) bias scale
    return max(2.0 * spread / math.sqrt(n_mc), 1e-3)


@pytest.mark.slow
class TestRecoveryAtScale:
    def test_recovery_at_full_settings(self, model):
        assert _recovery_error(model, 50) <= 0.1

    def test_error_shrinks_with_eps(self, model):
        coarse = _recovery_error(example2(eps=0.1), 50)
        fine = _recovery_error(model, 50)
        assert fine <= coarse + _monte_carlo_slack(_single_realization_spread(model), 50)

    def test_error_shrinks_with_realizations(self, model):
        spread = _single_realization_spread(model)
        sizes = (10, 50, 200)
        errors = [_recovery_error(model, n, grid_n=11, refine_iters=30) for n in sizes]
        for (n, before), after in zip(zip(sizes, errors), errors[1:]):
            assert after <= before + _monte_carlo_slack(spread, n)
        assert errors[-1] <= 0.1


class TestErrorBound:
    def test_gradient_in_parameter(self, model):
        u = model.op.project_constant(0.3)
        expected = 0.01 * math.sin(float(np.dot(u, model.op.basis_const_coeffs)))
        assert grad_d_g(model, u, np.array([1.0]), 1.0)[0] == pytest.approx(expected, rel=1e-8)

    def test_terms_vanish_with_perfect_data(self):
        eps_term, obs_terms = error_terms(0.01, 0.01, 1.3, 0.01, 2.0, 0.0, 0.0)
        assert eps_term == 0.0
        assert obs_terms == (0.0, 0.0, 0.0)

    def test_eps_term_is_linear_in_eps(self):
        small, _ = error_terms(0.01, 0.01, 1.3, 0.01, 2.0, 0.0, 0.5)
        large, _ = error_terms(0.01, 0.01, 1.3, 0.02, 2.0, 0.0, 0.5)
        assert large == pytest.approx(2.0 * small)

    def test_observation_terms_scale_with_root_F(self):
        _, one = error_terms(0.01, 0.01, 1.3, 0.01, 2.0, 1.0, 0.0)
        _, four = error_terms(0.01, 0.01, 1.3, 0.01, 2.0, 4.0, 0.0)
        assert four == pytest.approx(tuple(2.0 * x for x in one))

    def test_bound_is_zero_for_consistent_data(self, model, reduced_observations):
        p = _problem(model, reduced_observations)
        result = EstimationResult(d_hat=1.0, objective_curve=np.array([[1.0, 0.0, 0.0]]), F_min=0.0)
        bound = error_bound_report(p, result)
        assert bound.informative
        assert bound.G_value > 0.0
        assert bound.bound == pytest.approx(0.0, abs=1e-9)
        assert set(bound.G_sensitivity) == {"T/4", "T/2", "3T/4"}

    def test_missing_initial_state_warns(self, model, reduced_observations):
        stripped = [type(o)(trajectory=o.trajectory, seed=o.seed) for o in reduced_observations]
        p = _problem(model, stripped)
        result = EstimationResult(d_hat=1.0, objective_curve=np.array([[1.0, 0.0, 0.0]]), F_min=0.0)
        with patch("fracslow.estimation.logger") as mock_logger:
            bound = error_bound_report(p, result)
        assert bound.manifold_offset == 0.0
        mock_logger.warning.assert_called()
