# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from __future__ import annotations

from argparse import Namespace
import copy
from dataclasses import replace
from deepmerge.merger import Merger
import importlib
import math
import os
import signal
from types import FrameType
from typing import TYPE_CHECKING, Any, Callable, cast

import numpy as np
import yaml

from fracslow.dynamics import ModelSpec, example2
from fracslow.errors import ConfigError, FracSlowError
from fracslow.manifold import LPConfig
from fracslow.noise import grid_steps

if TYPE_CHECKING:
    from fracslow.interface import FracSlowProtocol as FracSlow

ENV_OUTPUT_DIR = "FRACSLOW_OUTPUT_DIR"
RESERVED_KEYS = ("config_from", "config_path")

# fmt: off
DEFAULTS: dict[str, Any] = {
    "model": {
        "name":                 "example2",
        "factory":              "",
        "alpha":                1.2,
        "eps":                  0.01,
        "sigma1":               0.1,
        "sigma2":               0.1,
        "n_modes":              16,
        "J":                    [[-1.0]],
        "gamma2":               1.0,
        "a":                    1.0,
    },
    "numerics": {
        "dt":                   0.001,
        "T":                    1.0,
        "t_minus":              0.0,
        "tol":                  1e-8,
        "max_iter":             50,
        "n_mc":                 50,
        "seed":                 7,
        "workers":              4,
    },
    "experiment": {
        "name":                 "check",
        "v0":                   [2.0],
        "u0":                   "manifold",
        "v0_grid":              {"lo": -3.0, "hi": 3.0, "step": 0.5},
        "samples":              1,
        "lambda_range":         [0.2, 2.0],
        "a_true":               1.0,
        "grid_n":               21,
        "refine_iters":         40,
        "manifold_mode":        "leading_order",
        "projection":           "shooting",
        "slack":                0.1,
        "observation_source":   "full",
        "shared_seeds":         True,
        "recovery_tol":         0.1,
        "dump_noise":           False,
        "spot_samples":         64,
    },
    "output": {
        "dir":                  "./out",
    },
    "debug":                    False,
}

CHOICES: dict[str, tuple[str, ...]] = {
    "model.name":                       ("example2", "custom"),
    "experiment.name":                  ("check", "simulate", "manifold", "tracking", "estimate"),
    "experiment.u0":                    ("manifold", "zero"),
    "experiment.manifold_mode":         ("leading_order", "lyapunov_perron"),
    "experiment.projection":            ("shooting", "fiber"),
    "experiment.observation_source":    ("full", "reduced"),
}
# fmt: on

# lists replace rather than extend, so a file's v0 never accumulates the default
MERGER = Merger([(dict, "merge")], ["override"], ["override"])


def first_value(*values: Any) -> Any:
    for value in values:
        if value is not None and value != "":
            return value
    return None


def _to_float(key: str, value: Any) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"`{key}` must be a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"`{key}` must be a number, got {value!r}") from None


def _to_int(key: str, value: Any) -> int:
    number = _to_float(key, value)
    if not number.is_integer():
        raise ConfigError(f"`{key}` must be an integer, got {value!r}")
    return int(number)


def _normalize(key: str, default: Any, value: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"`{key}` must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        return _to_int(key, value)
    if isinstance(default, float):
        return _to_float(key, value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"`{key}` must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"`{key}` must be a nonempty list, got {value!r}")
        if isinstance(default[0], list):
            if not all(isinstance(row, list) for row in value):
                raise ConfigError(f"`{key}` must be a list of lists, got {value!r}")
            return [[_to_float(key, x) for x in row] for row in value]
        return [_to_float(key, x) for x in value]
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"`{key}` must be a section, got {value!r}")
        return _normalize_section(key, default, value)
    return value


def _normalize_section(prefix: str, defaults: dict[str, Any], section: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for name, value in section.items():
        key = f"{prefix}.{name}" if prefix else str(name)
        if name not in defaults:
            raise ConfigError(f"unknown config key `{key}`")
        out[name] = _normalize(key, defaults[name], value)
    return out


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"`{key}` {message}")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return yaml.safe_dump(value, default_flow_style=True, sort_keys=True).strip()
    return str(value)


class HelpersMixin:
    def handle_signal(self: FracSlow, signum: int, frame: FrameType | None) -> Any:
        sig_name = signal.Signals(signum).name
        self.logger.warning(f"{sig_name} received - stopping experiment")
        self.running = False
        if self.experiment_task is not None and not self.experiment_task.done():
            self.loop.call_soon_threadsafe(self.experiment_task.cancel)

    # Config --------------------------------------------------------------------------------------

    def load_config(self: FracSlow, config_arg: Any | None = None) -> dict[str, Any]:
        config_from = "defaults"
        file_config: Any = {}

        config_path = config_arg or "./config.yaml"
        config_path = os.path.expanduser(config_path)
        config_path = os.path.abspath(config_path)

        if os.path.isdir(config_path):
            config_file = os.path.join(config_path, "config.yaml")
        elif os.path.isfile(config_path) or config_path.endswith((".yaml", ".yml")):
            config_file = config_path
            config_path = os.path.dirname(config_file)
        else:
            config_file = os.path.join(config_path, "config.yaml")

        if os.path.exists(config_file):
            try:
                with open(config_file, "r", encoding="utf-8") as f:
                    file_config = yaml.safe_load(f) or {}
                config_from = "file"
            except (OSError, yaml.YAMLError) as err:
                raise ConfigError(f"failed to load config from {config_file}: {err}") from err
        else:
            self.logger.warning(f"config file not found at {config_file}, using built-in defaults")

        if not isinstance(file_config, dict):
            raise ConfigError(f"config file {config_file} must hold a mapping of sections")

        config = cast(dict[str, Any], MERGER.merge(copy.deepcopy(DEFAULTS), _normalize_section("", DEFAULTS, file_config)))

        # the output directory is the only thing the environment may set
        config["output"]["dir"] = first_value(os.getenv(ENV_OUTPUT_DIR), config["output"]["dir"])
        config["config_from"] = config_from
        config["config_path"] = config_path
        return config

    def apply_overrides(self: FracSlow, config: dict[str, Any], args: Namespace | None) -> dict[str, Any]:
        config = copy.deepcopy(config)
        for item in getattr(args, "set", None) or []:
            key, sep, raw = item.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigError(f"override `{item}` is not of the form section.key=value")
            try:
                value = yaml.safe_load(raw)
            except yaml.YAMLError as err:
                raise ConfigError(f"override `{key}` has an unparsable value: {err}") from err

            *parents, leaf = key.split(".")
            defaults: Any = DEFAULTS
            target = config
            for part in parents:
                if not isinstance(defaults, dict) or part not in defaults or not isinstance(defaults[part], dict):
                    raise ConfigError(f"unknown config key `{key}`")
                defaults, target = defaults[part], target[part]
            if not isinstance(defaults, dict) or leaf not in defaults:
                raise ConfigError(f"unknown config key `{key}`")
            target[leaf] = _normalize(key, defaults[leaf], value)
            self.logger.debug(f"override {key}={_format(target[leaf])}")

        if getattr(args, "seed", None) is not None:
            config["numerics"]["seed"] = int(args.seed)
        if getattr(args, "out", None):
            config["output"]["dir"] = args.out
        return config

    def validate_config(self: FracSlow, config: dict[str, Any]) -> dict[str, Any]:
        for key, choices in CHOICES.items():
            section, name = key.split(".")
            _require(config[section][name] in choices, key, f"must be one of {', '.join(choices)}, got {config[section][name]!r}")

        model, numerics, experiment = config["model"], config["numerics"], config["experiment"]
        _require(model["name"] != "custom" or ":" in model["factory"], "model.factory", "must be module:function for a custom model")
        _require(numerics["dt"] > 0, "numerics.dt", "must be positive")
        _require(numerics["T"] > 0, "numerics.T", "must be positive")
        _require(numerics["t_minus"] >= 0, "numerics.t_minus", "must be nonnegative")
        _require(numerics["n_mc"] >= 1, "numerics.n_mc", "must be >= 1")
        _require(numerics["workers"] >= 1, "numerics.workers", "must be >= 1")
        _require(numerics["seed"] >= 0, "numerics.seed", "must be nonnegative")
        _require(experiment["samples"] >= 1, "experiment.samples", "must be >= 1")
        _require(experiment["grid_n"] >= 5, "experiment.grid_n", "must be >= 5")
        _require(experiment["refine_iters"] >= 0, "experiment.refine_iters", "must be >= 0")
        _require(experiment["slack"] >= 0, "experiment.slack", "must be nonnegative")
        _require(experiment["recovery_tol"] > 0, "experiment.recovery_tol", "must be positive")
        _require(experiment["spot_samples"] >= 1, "experiment.spot_samples", "must be >= 1")
        grid = experiment["v0_grid"]
        _require(grid["step"] > 0, "experiment.v0_grid.step", "must be positive")
        _require(grid["hi"] > grid["lo"], "experiment.v0_grid.hi", "must exceed experiment.v0_grid.lo")
        lo_hi = experiment["lambda_range"]
        _require(len(lo_hi) == 2 and lo_hi[0] < lo_hi[1], "experiment.lambda_range", "must be [lo, hi] with lo < hi")
        _require(lo_hi[0] <= experiment["a_true"] <= lo_hi[1], "experiment.a_true", "must lie inside experiment.lambda_range")

        for value in (numerics["T"], numerics["t_minus"], numerics["dt"]):
            _require(math.isfinite(value), "numerics", f"holds a non-finite value {value!r}")
        try:
            grid_steps(numerics["T"], numerics["dt"], "numerics.T")
        except FracSlowError as err:
            raise ConfigError(str(err)) from err
        return config

    def build_model(self: FracSlow) -> ModelSpec:
        section = self.config["model"]
        try:
            if section["name"] == "example2":
                m = example2(
                    alpha=section["alpha"],
                    eps=section["eps"],
                    sigma1=section["sigma1"],
                    sigma2=section["sigma2"],
                    n_modes=section["n_modes"],
                    a=section["a"],
                )
                if section["J"] != DEFAULTS["model"]["J"] or section["gamma2"] != DEFAULTS["model"]["gamma2"]:
                    m = replace(m, J=np.array(section["J"]), gamma2=section["gamma2"])
            else:
                module_name, _, func_name = section["factory"].partition(":")
                factory = cast(Callable[[dict[str, Any]], ModelSpec], getattr(importlib.import_module(module_name), func_name))
                m = factory(copy.deepcopy(section))
                if not isinstance(m, ModelSpec):
                    raise ConfigError(f"`model.factory` {section['factory']} did not return a ModelSpec")
        except (ImportError, AttributeError) as err:
            raise ConfigError(f"`model.factory` {section['factory']} cannot be loaded: {err}") from err
        except ConfigError:
            raise
        except FracSlowError as err:
            raise ConfigError(f"`model` section is invalid: {err}") from err

        v0 = self.config["experiment"]["v0"]
        _require(len(v0) == m.slow_dim, "experiment.v0", f"must have {m.slow_dim} components, got {len(v0)}")
        return m

    def build_lp_config(self: FracSlow) -> LPConfig:
        numerics = self.config["numerics"]
        try:
            return LPConfig(t_minus=numerics["t_minus"], dt=numerics["dt"], tol=numerics["tol"], max_iter=numerics["max_iter"])
        except FracSlowError as err:
            raise ConfigError(f"`numerics` section is invalid: {err}") from err

    def resolved_config(self: FracSlow) -> dict[str, Any]:
        # output.dir is excluded; runs into different directories stay byte-identical
        return {key: copy.deepcopy(value) for key, value in self.config.items() if key not in RESERVED_KEYS and key != "output"}

    def flatten_config(self: FracSlow) -> dict[str, Any]:
        flat: dict[str, Any] = {}

        def walk(prefix: str, node: Any) -> None:
            if isinstance(node, dict):
                for key in sorted(node):
                    walk(f"{prefix}.{key}", node[key])
            else:
                flat[prefix] = _format(node)

        walk("config", self.resolved_config())
        return flat
