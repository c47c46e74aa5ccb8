from argparse import Namespace
from asyncio import AbstractEventLoop, Lock, Task
from concurrent.futures import ThreadPoolExecutor
from logging import Logger
from pathlib import Path
from types import FrameType
from typing import Any, Protocol

import numpy as np
from numpy.typing import NDArray

from fracslow.dynamics import HypothesisReport, ModelSpec
from fracslow.manifold import LPConfig
from fracslow.mixins.experiments import ExperimentOutcome
from fracslow.noise import NoiseRealization


class FracSlowProtocol(Protocol):
    args: Namespace | None
    config: dict[str, Any]
    experiment_task: Task[Any] | None
    logger: Logger
    loop: AbstractEventLoop
    lp_config: LPConfig
    model: ModelSpec
    out_dir: Path
    pool: ThreadPoolExecutor
    running: bool
    write_lock: Lock

    async def main_loop(self) -> int: ...
    async def publish_outcome(self, outcome: ExperimentOutcome) -> None: ...
    async def run_check(self, hypothesis: HypothesisReport) -> ExperimentOutcome: ...
    async def run_estimate(self) -> ExperimentOutcome: ...
    async def run_experiment(self, name: str) -> ExperimentOutcome: ...
    async def run_manifold(self) -> ExperimentOutcome: ...
    async def run_simulate(self) -> ExperimentOutcome: ...
    async def run_tracking(self) -> ExperimentOutcome: ...

    def apply_overrides(self, config: dict[str, Any], args: Namespace | None) -> dict[str, Any]: ...
    def build_lp_config(self) -> LPConfig: ...
    def build_model(self) -> ModelSpec: ...
    def flatten_config(self) -> dict[str, Any]: ...
    def handle_signal(self, signum: int, frame: FrameType | None) -> Any: ...
    def initial_fast(self, noise: NoiseRealization, v0: NDArray[np.float64]) -> NDArray[np.float64]: ...
    def load_config(self, config_arg: Any | None = None) -> dict[str, Any]: ...
    def noise_window(self, seed: int, t_hi: float, needs_past: bool) -> NoiseRealization: ...
    def resolved_config(self) -> dict[str, Any]: ...
    def validate_config(self, config: dict[str, Any]) -> dict[str, Any]: ...
    def write_columns(self, tables: dict[str, list[str]]) -> Path: ...
    def write_report(self, lines: list[str]) -> Path: ...
    def write_resolved_config(self) -> Path: ...
    def write_summary(self, summary: dict[str, Any]) -> Path: ...
    def write_table(self, name: str, columns: list[str], rows: NDArray[np.float64]) -> Path: ...
