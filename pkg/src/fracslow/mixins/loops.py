# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from __future__ import annotations

import asyncio
import signal
from typing import TYPE_CHECKING

from fracslow.errors import ConfigError, InvariantError, ParameterError

if TYPE_CHECKING:
    from fracslow.interface import FracSlowProtocol as FracSlow


class LoopsMixin:
    # main loop
    async def main_loop(self: FracSlow) -> int:
        for sig in (signal.SIGTERM, signal.SIGINT):
            try:
                signal.signal(sig, self.handle_signal)
            except Exception:
                self.logger.debug(f"cannot install handler for {sig}")

        name = self.config["experiment"]["name"]
        self.running = True
        self.logger.info(f"running {name} experiment with seed {self.config['numerics']['seed']} into {self.out_dir}")

        self.experiment_task = asyncio.create_task(self.run_experiment(name), name=f"experiment_{name}")
        try:
            outcome = await self.experiment_task
        except asyncio.CancelledError:
            self.logger.warning(f"{name} experiment cancelled - no outputs written")
            raise
        except ConfigError:
            raise
        except ParameterError as err:
            # numeric preconditions that only surface once the run starts
            raise ConfigError(f"{name} experiment rejected its parameters: {err}") from err
        finally:
            self.running = False

        await self.publish_outcome(outcome)

        if not outcome.passed:
            raise InvariantError(f"{name} experiment failed its pass criterion, see {self.out_dir / 'report.txt'}")
        self.logger.info(f"{name} experiment passed")
        return 0
