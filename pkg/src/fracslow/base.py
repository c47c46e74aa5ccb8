# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
import argparse
import asyncio
import concurrent.futures
import logging
from pathlib import Path
from json_logging import get_logger
from types import TracebackType

from typing import Any, Self, cast

from fracslow.interface import FracSlowProtocol as FracSlow


class Base:
    def __init__(self: FracSlow, args: argparse.Namespace | None = None, **kwargs: Any) -> None:
        super().__init__(**kwargs)

        self.loop = asyncio.get_running_loop()
        self.loop.set_default_executor(concurrent.futures.ThreadPoolExecutor(max_workers=4))

        self.args = args
        self.logger = get_logger(__name__)

        # now load self.config right away, then layer the command line on top
        cfg_arg = getattr(args, "config", None)
        config = self.load_config(cfg_arg)
        config = self.apply_overrides(config, args)
        if getattr(args, "experiment", None):
            config["experiment"]["name"] = args.experiment
        self.config = self.validate_config(config)

        # down in trenches if we have to
        if self.config.get("debug"):
            self.logger.setLevel(logging.DEBUG)

        self.model = self.build_model()
        self.lp_config = self.build_lp_config()
        self.out_dir = Path(self.config["output"]["dir"]).expanduser().resolve()

        self.pool = concurrent.futures.ThreadPoolExecutor(max_workers=self.config["numerics"]["workers"], thread_name_prefix="fracslow")
        self.write_lock = asyncio.Lock()
        self.running = False
        self.experiment_task: asyncio.Task[Any] | None = None

    async def __aenter__(self: Self) -> FracSlow:
        super_enter = getattr(super(), "__enter__", None)
        if callable(super_enter):
            super_enter()

        cast(Any, self).running = True
        return cast(FracSlow, self)

    async def __aexit__(self: Self, exc_type: BaseException | None, exc_val: BaseException | None, exc_tb: TracebackType) -> None:
        super_exit = getattr(super(), "__exit__", None)
        if callable(super_exit):
            super_exit(exc_type, exc_val, exc_tb)

        cast(Any, self).running = False

        pool = getattr(self, "pool", None)
        if pool is not None:
            pool.shutdown(wait=True, cancel_futures=True)

        cast(Any, self).logger.info("exiting gracefully")
