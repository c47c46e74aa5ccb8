# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
import asyncio
import argparse
from json_logging import setup_logging, get_logger
from .core import FracSlow
from .errors import ConfigError, FracSlowError, InvariantError

EXPERIMENTS = ("check", "simulate", "manifold", "tracking", "estimate")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-c",
        "--config",
        default="./config.yaml",
        help="Directory or file path for config.yaml (defaults to ./config.yaml)",
    )
    common.add_argument("--out", default=None, help="Output directory (overrides output.dir and FRACSLOW_OUTPUT_DIR)")
    common.add_argument("--seed", type=int, default=None, help="Base random seed (overrides numerics.seed)")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one config value; repeatable",
    )

    p = argparse.ArgumentParser(prog="fracslow", exit_on_error=True)
    sub = p.add_subparsers(dest="experiment", required=True, metavar="{" + ",".join(EXPERIMENTS) + "}")
    sub.add_parser("check", parents=[common], help="Structural hypotheses and spectrum of the model")
    sub.add_parser("simulate", parents=[common], help="Full and reduced trajectories from one seed")
    sub.add_parser("manifold", parents=[common], help="Slow manifold over a grid of slow states")
    sub.add_parser("tracking", parents=[common], help="Exponential tracking toward the manifold")
    sub.add_parser("estimate", parents=[common], help="Recover the slow-drift parameter from synthetic observations")
    return p


async def async_main(argv: list[str] | None = None) -> int:
    setup_logging()
    logger = get_logger(__name__)

    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        async with FracSlow(args=args) as fracslow:
            return await fracslow.main_loop()
    except ConfigError as err:
        logger.error(f"fatal config error was found: {err!r}")
        return 2
    except InvariantError as err:
        logger.error(f"experiment failed: {err!r}")
        return 1
    except FracSlowError as err:
        logger.error(f"numerical failure: {err!r}")
        return 1
    except KeyboardInterrupt:
        logger.warning("shutdown requested (Ctrl+C). exiting gracefully...")
        return 1
    except asyncio.CancelledError:
        logger.warning("main loop cancelled.")
        return 1
    except Exception as err:
        logger.error(f"unhandled exception: {err!r}", exc_info=True)
        return 1
    finally:
        logger.info("fracslow stopped.")


def main(argv: list[str] | None = None) -> int:
    try:
        return asyncio.run(async_main(argv))
    except RuntimeError as err:
        # Fallback for nested loops (Jupyter, tests, etc.)
        if "asyncio.run() cannot be called from a running event loop" in str(err):
            loop = asyncio.get_event_loop()
            return loop.run_until_complete(async_main(argv))
        raise
