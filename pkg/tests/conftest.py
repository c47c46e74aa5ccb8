# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
import pytest

from fracslow.dynamics import example2, realize_noise
from fracslow.manifold import LPConfig, effective_t_minus


@pytest.fixture(scope="session")
def model():
    return example2()


@pytest.fixture(scope="session")
def quiet_model():
    """The built-in model with both noise intensities switched off."""
    return example2(sigma1=0.0, sigma2=0.0)


@pytest.fixture(scope="session")
def lp_config():
    return LPConfig(dt=1e-3, tol=1e-8)


@pytest.fixture(scope="session")
def past_noise(model, lp_config):
    """One realization covering [-T_minus, 1] on the Lyapunov-Perron grid."""
    return realize_noise(model, 11, -effective_t_minus(model, lp_config), 1.0, lp_config.dt)


@pytest.fixture(scope="session")
def quiet_past_noise(quiet_model, lp_config):
    return realize_noise(quiet_model, 11, -effective_t_minus(quiet_model, lp_config), 1.0, lp_config.dt)

