# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
import math

import numpy as np
import pytest

from fracslow.dynamics import example2, gap_mu, realize_noise
from fracslow.errors import ParameterError
from fracslow.manifold import effective_t_minus, lp_solve
from fracslow.tracking import fit_decay_rate, project_to_manifold, tracking_verify


def _start(m):
    return (m.op.project_constant(1.0), np.array([2.0]))


class TestFitDecayRate:
    def test_recovers_exponential_rate(self):
        times = np.linspace(0.0, 1.0, 101)
        assert fit_decay_rate(times, 3.0 * np.exp(-5.0 * times), t_start=0.0) == pytest.approx(5.0)

    def test_ignores_samples_below_floor(self):
        times = np.linspace(0.0, 1.0, 101)
        gaps = np.where(times < 0.5, np.exp(-40.0 * times), 0.0)
        assert fit_decay_rate(times, gaps, t_start=0.1) == pytest.approx(40.0)

    def test_too_few_samples_is_infinite(self):
        times = np.linspace(0.0, 1.0, 11)
        assert math.isinf(fit_decay_rate(times, np.zeros(11), t_start=0.0))


class TestProjection:
    def test_fiber_keeps_slow_component(self, model, past_noise, lp_config):
        projected = project_to_manifold(model, past_noise, _start(model), lp_config, method="fiber")
        assert projected.V[0] == 2.0
        assert np.array_equal(projected.U, lp_solve(model, past_noise, [2.0], lp_config).H_value)

    def test_point_on_manifold_projects_to_itself(self, model, past_noise, lp_config):
        on = lp_solve(model, past_noise, [2.0], lp_config)
        projected = project_to_manifold(model, past_noise, (on.H_value, [2.0]), lp_config, method="shooting")
        assert projected.iterations == 1
        assert np.array_equal(projected.V, np.array([2.0]))
        assert np.array_equal(projected.U, on.H_value)

    def test_shooting_moves_the_slow_component(self, model, past_noise, lp_config):
        projected = project_to_manifold(model, past_noise, _start(model), lp_config, method="shooting")
        assert projected.V[0] != 2.0
        assert abs(projected.V[0] - 2.0) < 0.01

    def test_unknown_method_rejected(self, model, past_noise, lp_config):
        with pytest.raises(ParameterError):
            project_to_manifold(model, past_noise, _start(model), lp_config, method="nearest")

    def test_shape_mismatch_rejected(self, model, past_noise, lp_config):
        with pytest.raises(ParameterError):
            project_to_manifold(model, past_noise, (np.zeros(3), [2.0]), lp_config)


class TestTrackingVerify:
    def test_gap_decays_at_least_at_bound_rate(self, model, past_noise, lp_config):
        report = tracking_verify(model, past_noise, _start(model), 1.0, 1e-3, lp_config)
        assert report.passed
        assert report.bound_rate == pytest.approx(27.543, rel=1e-3)
        assert report.bound_prefactor == pytest.approx(1.010067, rel=1e-5)
        assert report.fitted_rate >= 0.9 * report.bound_rate
        assert report.projection == "shooting"
        assert report.table().shape == (1001, 3)

    def test_halving_eps_doubles_rate(self, model, past_noise, lp_config):
        half = example2(eps=model.eps / 2.0)
        half_noise = realize_noise(half, 11, -effective_t_minus(half, lp_config), 1.0, lp_config.dt)
        fast = tracking_verify(half, half_noise, _start(half), 1.0, 1e-3, lp_config)
        slow = tracking_verify(model, past_noise, _start(model), 1.0, 1e-3, lp_config)
        ratio = fast.fitted_rate / slow.fitted_rate
        assert 2.0 * 0.8 <= ratio <= 2.0 * 1.2

    def test_started_on_manifold_gap_is_zero(self, model, past_noise, lp_config):
        on = lp_solve(model, past_noise, [2.0], lp_config)
        report = tracking_verify(model, past_noise, (on.H_value, [2.0]), 1.0, 1e-3, lp_config)
        assert np.all(report.gaps == 0.0)
        assert report.passed

    def test_horizon_too_short_rejected(self, model, past_noise, lp_config):
        too_short = 5.0 * model.eps / gap_mu(model)
        with pytest.raises(ParameterError):
            tracking_verify(model, past_noise, _start(model), round(too_short, 3), 1e-3, lp_config)

    def test_default_config_follows_step(self, model, past_noise):
        report = tracking_verify(model, past_noise, _start(model), 0.5, 1e-3)
        assert report.times[1] == pytest.approx(1e-3)
