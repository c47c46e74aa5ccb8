# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from argparse import Namespace
import copy
import signal
import pytest
from unittest.mock import MagicMock

from fracslow.dynamics import ModelSpec, example2
from fracslow.errors import ConfigError
from fracslow.mixins.helpers import DEFAULTS, ENV_OUTPUT_DIR, HelpersMixin, first_value


def custom_model(section):
    return example2(eps=section["eps"], n_modes=8)


def not_a_model(section):
    return {"eps": section["eps"]}


class FakeHelpers(HelpersMixin):
    def __init__(self, config=None):
        self.logger = MagicMock()
        self.loop = MagicMock()
        self.running = True
        self.experiment_task = None
        self.config = config if config is not None else copy.deepcopy(DEFAULTS)


def _args(**kwargs):
    kwargs.setdefault("set", [])
    kwargs.setdefault("seed", None)
    kwargs.setdefault("out", None)
    return Namespace(**kwargs)


class TestFirstValue:
    def test_skips_empty_values(self):
        assert first_value(None, "", "x", "y") == "x"

    def test_none_when_all_empty(self):
        assert first_value(None, "") is None


class TestLoadConfigFromFile:
    def test_loads_directory_config(self, tmp_path, monkeypatch):
        monkeypatch.delenv(ENV_OUTPUT_DIR, raising=False)
        (tmp_path / "config.yaml").write_text("""
model:
  eps: 0.05
numerics:
  dt: 1e-3
  n_mc: 10
experiment:
  v0: [1.5]
""")
        config = FakeHelpers().load_config(str(tmp_path))

        assert config["model"]["eps"] == 0.05
        assert config["numerics"]["dt"] == 0.001
        assert config["numerics"]["n_mc"] == 10
        assert config["experiment"]["v0"] == [1.5]
        assert config["model"]["alpha"] == 1.2
        assert config["config_from"] == "file"
        assert config["config_path"] == str(tmp_path)

    def test_loads_named_yaml_file(self, tmp_path):
        config_file = tmp_path / "run.yml"
        config_file.write_text("numerics:\n  seed: 3\n")

        config = FakeHelpers().load_config(str(config_file))

        assert config["numerics"]["seed"] == 3

    def test_list_replaces_default(self, tmp_path):
        (tmp_path / "config.yaml").write_text("experiment:\n  lambda_range: [0.5, 1.5]\n")

        config = FakeHelpers().load_config(str(tmp_path))

        assert config["experiment"]["lambda_range"] == [0.5, 1.5]

    def test_unknown_key_rejected(self, tmp_path):
        (tmp_path / "config.yaml").write_text("model:\n  epsilon: 0.05\n")

        with pytest.raises(ConfigError, match="model.epsilon"):
            FakeHelpers().load_config(str(tmp_path))

    def test_bad_type_rejected(self, tmp_path):
        (tmp_path / "config.yaml").write_text("numerics:\n  n_mc: lots\n")

        with pytest.raises(ConfigError, match="numerics.n_mc"):
            FakeHelpers().load_config(str(tmp_path))

    def test_non_mapping_rejected(self, tmp_path):
        (tmp_path / "config.yaml").write_text("- just\n- a list\n")

        with pytest.raises(ConfigError):
            FakeHelpers().load_config(str(tmp_path))

    def test_broken_yaml_rejected(self, tmp_path):
        (tmp_path / "config.yaml").write_text("model: [unclosed\n")

        with pytest.raises(ConfigError):
            FakeHelpers().load_config(str(tmp_path))


class TestLoadConfigDefaults:
    def test_defaults_when_no_file(self, tmp_path, monkeypatch):
        monkeypatch.delenv(ENV_OUTPUT_DIR, raising=False)
        helpers = FakeHelpers()

        config = helpers.load_config(str(tmp_path))

        assert config["model"]["name"] == "example2"
        assert config["numerics"]["dt"] == 0.001
        assert config["experiment"]["lambda_range"] == [0.2, 2.0]
        assert config["output"]["dir"] == "./out"
        assert config["config_from"] == "defaults"
        helpers.logger.warning.assert_called_once()

    def test_environment_sets_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ENV_OUTPUT_DIR, "/tmp/fracslow-runs")

        config = FakeHelpers().load_config(str(tmp_path))

        assert config["output"]["dir"] == "/tmp/fracslow-runs"

    def test_defaults_are_not_mutated(self, tmp_path):
        (tmp_path / "config.yaml").write_text("experiment:\n  v0: [0.5]\n")

        FakeHelpers().load_config(str(tmp_path))

        assert DEFAULTS["experiment"]["v0"] == [2.0]


class TestApplyOverrides:
    def test_set_overrides_file_value(self):
        helpers = FakeHelpers()

        config = helpers.apply_overrides(helpers.config, _args(set=["model.eps=0.05", "numerics.dt=5e-4"]))

        assert config["model"]["eps"] == 0.05
        assert config["numerics"]["dt"] == 0.0005
        assert helpers.config["model"]["eps"] == 0.01

    def test_nested_key(self):
        helpers = FakeHelpers()

        config = helpers.apply_overrides(helpers.config, _args(set=["experiment.v0_grid.step=0.25"]))

        assert config["experiment"]["v0_grid"]["step"] == 0.25

    def test_seed_and_out_win_over_set(self):
        helpers = FakeHelpers()

        config = helpers.apply_overrides(helpers.config, _args(set=["numerics.seed=1", "output.dir=/a"], seed=9, out="/b"))

        assert config["numerics"]["seed"] == 9
        assert config["output"]["dir"] == "/b"

    @pytest.mark.parametrize("item", ["model.eps", "=1", "model.nope=1", "nope.eps=1", "model.eps.x=1"])
    def test_bad_override_rejected(self, item):
        helpers = FakeHelpers()

        with pytest.raises(ConfigError):
            helpers.apply_overrides(helpers.config, _args(set=[item]))

    def test_list_override(self):
        helpers = FakeHelpers()

        config = helpers.apply_overrides(helpers.config, _args(set=["experiment.v0=[1.0]"]))

        assert config["experiment"]["v0"] == [1.0]


class TestValidateConfig:
    def test_defaults_are_valid(self):
        helpers = FakeHelpers()
        assert helpers.validate_config(helpers.config) is helpers.config

    @pytest.mark.parametrize(
        "section,key,value",
        [
            ("experiment", "name", "bogus"),
            ("numerics", "dt", 0.0),
            ("numerics", "n_mc", 0),
            ("numerics", "T", 1.0005),
            ("experiment", "grid_n", 3),
            ("experiment", "lambda_range", [2.0, 0.2]),
            ("experiment", "a_true", 5.0),
            ("model", "name", "custom"),
        ],
    )
    def test_invalid_values_rejected(self, section, key, value):
        helpers = FakeHelpers()
        helpers.config[section][key] = value

        with pytest.raises(ConfigError):
            helpers.validate_config(helpers.config)


class TestBuildModel:
    def test_example2_from_defaults(self):
        m = FakeHelpers().build_model()

        assert m.name == "example2"
        assert m.eps == 0.01
        assert m.n_modes == 16

    def test_custom_J(self):
        helpers = FakeHelpers()
        helpers.config["model"]["J"] = [[-2.0]]
        helpers.config["model"]["gamma2"] = 2.0

        m = helpers.build_model()

        assert m.J[0, 0] == -2.0
        assert m.gamma2 == 2.0

    def test_custom_factory(self):
        helpers = FakeHelpers()
        helpers.config["model"].update({"name": "custom", "factory": "tests.test_helpers:custom_model", "eps": 0.05})

        m = helpers.build_model()

        assert isinstance(m, ModelSpec)
        assert m.eps == 0.05
        assert m.n_modes == 8

    def test_missing_factory_rejected(self):
        helpers = FakeHelpers()
        helpers.config["model"].update({"name": "custom", "factory": "tests.test_helpers:nowhere"})

        with pytest.raises(ConfigError, match="model.factory"):
            helpers.build_model()

    def test_factory_must_return_model(self):
        helpers = FakeHelpers()
        helpers.config["model"].update({"name": "custom", "factory": "tests.test_helpers:not_a_model"})

        with pytest.raises(ConfigError):
            helpers.build_model()

    def test_invalid_model_parameters(self):
        helpers = FakeHelpers()
        helpers.config["model"]["eps"] = -1.0

        with pytest.raises(ConfigError, match="model"):
            helpers.build_model()

    def test_v0_length_checked(self):
        helpers = FakeHelpers()
        helpers.config["experiment"]["v0"] = [1.0, 2.0]

        with pytest.raises(ConfigError, match="experiment.v0"):
            helpers.build_model()

    def test_lp_config_from_numerics(self):
        helpers = FakeHelpers()
        helpers.config["numerics"]["tol"] = 1e-6

        cfg = helpers.build_lp_config()

        assert cfg.tol == 1e-6
        assert cfg.dt == 0.001


class TestResolvedConfig:
    def test_excludes_output_and_provenance(self):
        helpers = FakeHelpers()
        helpers.config["config_from"] = "file"
        helpers.config["config_path"] = "/somewhere"

        resolved = helpers.resolved_config()

        assert "output" not in resolved
        assert "config_from" not in resolved
        assert resolved["model"]["eps"] == 0.01

    def test_flatten_formats_values(self):
        flat = FakeHelpers().flatten_config()

        assert flat["config.model.eps"] == "0.01"
        assert flat["config.experiment.shared_seeds"] == "true"
        assert flat["config.experiment.v0"] == "[2.0]"
        assert flat["config.numerics.n_mc"] == "50"
        assert list(flat) == sorted(flat)


class TestHandleSignal:
    def test_stops_and_cancels_experiment(self):
        helpers = FakeHelpers()
        helpers.experiment_task = MagicMock()
        helpers.experiment_task.done.return_value = False

        helpers.handle_signal(signal.SIGTERM, None)

        assert helpers.running is False
        helpers.loop.call_soon_threadsafe.assert_called_once_with(helpers.experiment_task.cancel)
        helpers.logger.warning.assert_called_once()

    def test_without_task(self):
        helpers = FakeHelpers()

        helpers.handle_signal(signal.SIGINT, None)

        assert helpers.running is False
        helpers.loop.call_soon_threadsafe.assert_not_called()
