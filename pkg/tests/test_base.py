# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from argparse import Namespace
import pytest
from unittest.mock import MagicMock

from fracslow.base import Base
from fracslow.core import FracSlow
from fracslow.errors import ConfigError


class FakeBase(Base):
    """Minimal subclass so super() works in Base.__aenter__/__aexit__."""

    pass


def _args(tmp_path, **kwargs):
    kwargs.setdefault("experiment", "check")
    kwargs.setdefault("set", [])
    kwargs.setdefault("seed", None)
    return Namespace(config=str(tmp_path), out=str(tmp_path / "out"), **kwargs)


class TestContextManager:
    @pytest.mark.asyncio
    async def test_aenter_sets_running(self):
        obj = object.__new__(FakeBase)
        obj.logger = MagicMock()
        obj.running = False

        result = await Base.__aenter__(obj)

        assert obj.running is True
        assert result is obj

    @pytest.mark.asyncio
    async def test_aexit_shuts_down_pool(self):
        obj = object.__new__(FakeBase)
        obj.logger = MagicMock()
        obj.running = True
        obj.pool = MagicMock()

        await Base.__aexit__(obj, None, None, None)

        assert obj.running is False
        obj.pool.shutdown.assert_called_once_with(wait=True, cancel_futures=True)
        obj.logger.info.assert_called_with("exiting gracefully")

    @pytest.mark.asyncio
    async def test_aexit_handles_no_pool(self):
        obj = object.__new__(FakeBase)
        obj.logger = MagicMock()
        obj.running = True

        await Base.__aexit__(obj, None, None, None)

        assert obj.running is False


class TestConstruction:
    @pytest.mark.asyncio
    async def test_builds_model_and_paths(self, tmp_path):
        async with FracSlow(args=_args(tmp_path, seed=3, experiment="manifold")) as app:
            assert app.running is True
            assert app.config["experiment"]["name"] == "manifold"
            assert app.config["numerics"]["seed"] == 3
            assert app.model.name == "example2"
            assert app.lp_config.dt == 0.001
            assert app.out_dir == (tmp_path / "out").resolve()
            assert app.experiment_task is None

    @pytest.mark.asyncio
    async def test_override_reaches_model(self, tmp_path):
        async with FracSlow(args=_args(tmp_path, set=["model.eps=0.05"])) as app:
            assert app.model.eps == 0.05

    @pytest.mark.asyncio
    async def test_invalid_config_raises(self, tmp_path):
        with pytest.raises(ConfigError):
            FracSlow(args=_args(tmp_path, set=["numerics.dt=-1"]))
