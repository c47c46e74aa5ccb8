# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from numpy.typing import NDArray
import yaml

if TYPE_CHECKING:
    from fracslow.interface import FracSlowProtocol as FracSlow
    from fracslow.mixins.experiments import ExperimentOutcome

COLUMNS_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["experiment", "tables"],
    "properties": {
        "experiment": {"type": "string"},
        "tables": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["file", "columns"],
                "properties": {
                    "file": {"type": "string", "pattern": r"^[a-z0-9_]+\.csv$"},
                    "columns": {"type": "array", "items": {"type": "string"}, "minItems": 1, "uniqueItems": True},
                },
            },
        },
    },
}


def format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return repr(number) if math.isfinite(number) else str(number)
    return str(value)


class PublishMixin:
    async def publish_outcome(self: FracSlow, outcome: ExperimentOutcome) -> None:
        async with self.write_lock:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            for name, table in outcome.tables.items():
                self.write_table(name, table.columns, table.rows)
            self.write_columns({name: table.columns for name, table in outcome.tables.items()})

            summary: dict[str, Any] = {"experiment": outcome.name, "passed": outcome.passed}
            summary.update(outcome.summary)
            summary.update(self.flatten_config())
            self.write_summary(summary)
            self.write_resolved_config()

            lines = [f"experiment: {outcome.name}", f"result: {'pass' if outcome.passed else 'FAIL'}", ""]
            self.write_report(lines + outcome.report)
            self.logger.info(f"wrote {len(outcome.tables)} table(s) and summary to {self.out_dir}")

    def write_table(self: FracSlow, name: str, columns: list[str], rows: NDArray[np.float64]) -> Path:
        path = self.out_dir / f"{name}.csv"
        data = np.atleast_2d(np.asarray(rows, dtype=float))
        if data.shape[1] != len(columns):
            raise ValueError(f"table {name} has {data.shape[1]} columns, header names {len(columns)}")
        np.savetxt(path, data, delimiter=",", header=",".join(columns), comments="", fmt="%.17g")
        return path

    def write_columns(self: FracSlow, tables: dict[str, list[str]]) -> Path:
        path = self.out_dir / "columns.json"
        manifest = {
            "experiment": self.config["experiment"]["name"],
            "tables": {name: {"file": f"{name}.csv", "columns": columns} for name, columns in tables.items()},
        }
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def write_summary(self: FracSlow, summary: dict[str, Any]) -> Path:
        path = self.out_dir / "summary.txt"
        path.write_text("".join(f"{key}={format_value(value)}\n" for key, value in summary.items()), encoding="utf-8")
        return path

    def write_resolved_config(self: FracSlow) -> Path:
        path = self.out_dir / "resolved_config.yaml"
        path.write_text(yaml.safe_dump(self.resolved_config(), sort_keys=True), encoding="utf-8")
        return path

    def write_report(self: FracSlow, lines: list[str]) -> Path:
        path = self.out_dir / "report.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path
