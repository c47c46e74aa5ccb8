# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from __future__ import annotations

import asyncio
from dataclasses import dataclass, field
from functools import partial
import math
from typing import TYPE_CHECKING, Any

import numpy as np
from numpy.typing import NDArray

from fracslow.dynamics import (
    HypothesisReport,
    contraction_factor,
    gap_mu,
    hypothesis_check,
    realize_noise,
    simulate_full,
    simulate_reduced,
)
from fracslow.errors import ParameterError
from fracslow.estimation import EstimationProblem, estimate, make_evaluator, synthesize_observations
from fracslow.manifold import (
    LeadingOrderManifold,
    effective_t_minus,
    graph_invariance_defect,
    h0_leading_order,
    lipschitz_estimate,
    manifold_table,
)
from fracslow.noise import NoiseRealization, path_table
from fracslow.spectral import semigroup_decay_check
from fracslow.tracking import tracking_verify

if TYPE_CHECKING:
    from fracslow.interface import FracSlowProtocol as FracSlow

GRAPH_DEFECT_TOL = 0.05
GRAPH_TIMES = (0.1, 0.25, 0.5)
SEMIGROUP_HORIZON = 5.0


@dataclass(eq=False)
class Table:
    columns: list[str]
    rows: NDArray[np.float64]


@dataclass(eq=False)
class ExperimentOutcome:
    name: str
    passed: bool
    tables: dict[str, Table] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)
    report: list[str] = field(default_factory=list)


def _tagged(sample: int, rows: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.column_stack([np.full(rows.shape[0], float(sample)), rows])


class ExperimentsMixin:
    async def run_experiment(self: FracSlow, name: str) -> ExperimentOutcome:
        runners = {"simulate": self.run_simulate, "manifold": self.run_manifold, "tracking": self.run_tracking, "estimate": self.run_estimate}
        if name != "check" and name not in runners:
            raise ParameterError(f"unknown experiment '{name}'")

        # hypothesis report for every experiment
        hypothesis = await self.loop.run_in_executor(None, partial(hypothesis_check, self.model, self.config["experiment"]["spot_samples"]))
        outcome = await self.run_check(hypothesis) if name == "check" else await runners[name]()

        outcome.summary = {**{f"hypothesis.{key}": value for key, value in hypothesis.as_dict().items()}, **outcome.summary}
        outcome.report += ["", "hypotheses:"] + [f"  {key} = {value}" for key, value in hypothesis.as_dict().items()]
        outcome.report += [f"  note: {note}" for note in hypothesis.notes]
        return outcome

    # Noise and initial states --------------------------------------------------------------------

    def noise_window(self: FracSlow, seed: int, t_hi: float, needs_past: bool) -> NoiseRealization:
        # the Lyapunov-Perron solve needs the noise on [-T_minus, 0] as well
        t_lo = -effective_t_minus(self.model, self.lp_config) if needs_past else 0.0
        return realize_noise(self.model, seed, t_lo, t_hi, self.lp_config.dt)

    def initial_fast(self: FracSlow, noise: NoiseRealization, v0: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.config["experiment"]["u0"] == "zero":
            return np.zeros(self.model.n_modes)
        eta0, xi0 = noise.eta.value_at(0.0), noise.xi.value_at(0.0)
        return LeadingOrderManifold(self.model)(noise, 0.0, v0 - xi0, eta0, xi0) + eta0

    # Experiments ---------------------------------------------------------------------------------

    async def run_check(self: FracSlow, hypothesis: HypothesisReport) -> ExperimentOutcome:
        m = self.model
        semigroup = semigroup_decay_check(m.op, np.linspace(0.0, SEMIGROUP_HORIZON, 51))
        upsilon = contraction_factor(m)

        summary: dict[str, Any] = {
            "hypothesis.semigroup_constant": semigroup.constant,
            "hypothesis.tracking_prefactor": 1.0 / (1.0 - upsilon) if upsilon < 1.0 else math.inf,
            "hypothesis.lambda_max": m.op.lambda_max,
        }
        k = np.arange(1, m.n_modes + 1, dtype=float)
        spectrum = Table(["k", "eigenvalue", "const_coeff"], np.column_stack([k, m.op.eigenvalues, m.op.basis_const_coeffs]))
        lines = [f"semigroup decay constant = {semigroup.constant:.6g}"]
        return ExperimentOutcome("check", hypothesis.passed and semigroup.passed, {"spectrum": spectrum}, summary, lines)

    async def run_simulate(self: FracSlow) -> ExperimentOutcome:
        m = self.model
        experiment, numerics = self.config["experiment"], self.config["numerics"]
        T, dt = numerics["T"], numerics["dt"]
        v0 = np.array(experiment["v0"])
        lp_mode = experiment["manifold_mode"] == "lyapunov_perron"
        evaluator = make_evaluator(m, experiment["manifold_mode"], self.lp_config)

        def one(sample: int) -> tuple[NDArray[np.float64], float, NoiseRealization]:
            noise = self.noise_window(numerics["seed"] + sample, T, needs_past=lp_mode)
            full = simulate_full(m, noise, self.initial_fast(noise, v0), v0, T, dt)
            reduced = simulate_reduced(m, evaluator, noise, v0, m.d, T, dt)
            gap = float(np.max(np.linalg.norm(full.slow - reduced.slow, axis=1)))
            return _tagged(sample, np.column_stack([full.table(), reduced.slow])), gap, noise

        results = await asyncio.gather(*[self.loop.run_in_executor(self.pool, one, s) for s in range(experiment["samples"])])

        columns = ["sample", "time"] + [f"u_{k + 1}" for k in range(m.n_modes)]
        columns += [f"v_{i + 1}" for i in range(m.slow_dim)] + [f"v_reduced_{i + 1}" for i in range(m.slow_dim)]
        tables = {"trajectory": Table(columns, np.vstack([rows for rows, _, _ in results]))}
        if experiment["dump_noise"]:
            noise = results[0][2]
            # process 1 is the fast OU path, 2 the slow one
            rows = np.vstack([_tagged(1, path_table(noise.eta)), _tagged(2, path_table(noise.xi))])
            tables["noise"] = Table(["process", "time", "mode", "value"], rows)

        worst = max(gap for _, gap, _ in results)
        summary = {"simulate.samples": experiment["samples"], "simulate.max_slow_gap": worst, "simulate.steps": int(round(T / dt))}
        lines = [f"{experiment['samples']} sample(s) to T={T} at dt={dt}", f"largest full-vs-reduced slow gap {worst:.6g}"]
        return ExperimentOutcome("simulate", True, tables, summary, lines)

    async def run_manifold(self: FracSlow) -> ExperimentOutcome:
        m, cfg = self.model, self.lp_config
        experiment, numerics = self.config["experiment"], self.config["numerics"]
        grid = experiment["v0_grid"]
        count = int(round((grid["hi"] - grid["lo"]) / grid["step"])) + 1
        anchors = np.linspace(grid["lo"], grid["hi"], count)
        v0 = np.array(experiment["v0"])

        # one manifold per sample omega; anchors within a sample fan out to the pool
        results = []
        for sample in range(experiment["samples"]):
            noise = await self.loop.run_in_executor(None, partial(self.noise_window, numerics["seed"] + sample, max(GRAPH_TIMES), True))
            lip = await self.loop.run_in_executor(None, partial(lipschitz_estimate, m, noise, anchors, cfg, experiment["slack"], self.pool))
            graph = await self.loop.run_in_executor(None, partial(graph_invariance_defect, m, noise, v0, GRAPH_TIMES, cfg))
            results.append((lip, graph))

        columns: list[str] = []
        tagged = []
        for sample, (lip, _) in enumerate(results):
            columns, rows = manifold_table(m, lip.solutions)
            tagged.append(_tagged(sample, rows))
        solutions = [s for lip, _ in results for s in lip.solutions]
        iterations = max(s.iterations for s in solutions)
        contraction = max(s.contraction_estimate for s in solutions)
        measured = max(lip.measured_lip for lip, _ in results)
        defect = max(graph.worst_relative for _, graph in results)
        lip_ok = all(lip.passed for lip, _ in results)
        graph_ok = defect <= GRAPH_DEFECT_TOL

        summary: dict[str, Any] = {
            "manifold.samples": len(results),
            "manifold.anchors": count,
            "manifold.measured_lip": measured,
            "manifold.lipschitz_bound": results[0][0].bound,
            "manifold.lipschitz_ok": lip_ok,
            "manifold.iterations_max": iterations,
            "manifold.contraction_max": contraction,
            "manifold.contraction_factor": contraction_factor(m),
            "manifold.t_minus": effective_t_minus(m, cfg),
            "manifold.graph_defect": defect,
            "manifold.graph_ok": graph_ok,
            "manifold.h0_mode1": float(h0_leading_order(m, v0)[0]),
        }
        lines = [f"worst iteration count {iterations}, contraction estimate {contraction:.4g}"]
        for sample, (lip, graph) in enumerate(results):
            summary[f"manifold.sample_{sample}.measured_lip"] = lip.measured_lip
            summary[f"manifold.sample_{sample}.graph_defect"] = graph.worst_relative
            lines.append(
                f"sample {sample}: Lipschitz constant {lip.measured_lip:.6g} against bound {lip.bound:.6g}, "
                f"graph invariance defect {graph.worst_relative:.4g} at s in {list(GRAPH_TIMES)}"
            )
        table = Table(["sample"] + columns, np.vstack(tagged))
        return ExperimentOutcome("manifold", lip_ok and graph_ok, {"manifold": table}, summary, lines)

    async def run_tracking(self: FracSlow) -> ExperimentOutcome:
        m, cfg = self.model, self.lp_config
        experiment, numerics = self.config["experiment"], self.config["numerics"]
        T, dt = numerics["T"], numerics["dt"]
        v0 = np.array(experiment["v0"])
        # start away from the manifold: a flat unit fast profile
        U0 = m.op.project_constant(1.0)
        horizon = max(T, math.ceil(20.0 * m.eps / gap_mu(m) / dt - 1e-9) * dt)

        def one(sample: int) -> Any:
            noise = self.noise_window(numerics["seed"] + sample, horizon, needs_past=True)
            return tracking_verify(m, noise, (U0, v0), T, dt, cfg, projection=experiment["projection"], slack=experiment["slack"])

        reports = await asyncio.gather(*[self.loop.run_in_executor(self.pool, one, s) for s in range(experiment["samples"])])

        rows = np.vstack([_tagged(s, r.table()) for s, r in enumerate(reports)])
        rate_ok = [r.fitted_rate >= 0.9 * r.bound_rate for r in reports]
        passed = all(r.passed for r in reports) and all(rate_ok)
        worst_rate = min(r.fitted_rate for r in reports)
        summary = {
            "tracking.samples": len(reports),
            "tracking.projection": experiment["projection"],
            "tracking.bound_rate": reports[0].bound_rate,
            "tracking.bound_prefactor": reports[0].bound_prefactor,
            "tracking.fitted_rate_min": worst_rate,
            "tracking.envelope_ok": all(r.passed for r in reports),
            "tracking.rate_ok": all(rate_ok),
        }
        lines = [f"sample {s}: fitted rate {r.fitted_rate:.4g} vs {r.bound_rate:.4g}, envelope {'holds' if r.passed else 'violated'}" for s, r in enumerate(reports)]
        return ExperimentOutcome("tracking", passed, {"tracking": Table(["sample", "time", "gap", "envelope"], rows)}, summary, lines)

    async def run_estimate(self: FracSlow) -> ExperimentOutcome:
        m = self.model
        experiment, numerics = self.config["experiment"], self.config["numerics"]
        T, dt, seed = numerics["T"], numerics["dt"], numerics["seed"]
        lp_mode = experiment["manifold_mode"] == "lyapunov_perron"
        t_minus = effective_t_minus(m, self.lp_config) if lp_mode else 0.0
        seeds = [seed + r for r in range(numerics["n_mc"])]

        observations = await self.loop.run_in_executor(
            None,
            partial(
                synthesize_observations,
                m,
                experiment["a_true"],
                seeds,
                experiment["v0"],
                T,
                dt,
                t_minus=t_minus,
                source=experiment["observation_source"],
                manifold_mode=experiment["manifold_mode"],
                lp_config=self.lp_config,
            ),
        )
        problem = EstimationProblem(
            model=m,
            lambda_range=(experiment["lambda_range"][0], experiment["lambda_range"][1]),
            observations=observations,
            n_mc=numerics["n_mc"],
            v0=np.array(experiment["v0"]),
            t_minus=t_minus,
            shared_seeds=experiment["shared_seeds"],
            manifold_mode=experiment["manifold_mode"],
            lp_config=self.lp_config if lp_mode else None,
            mc_seed=seed,
        )
        result = await self.loop.run_in_executor(None, partial(estimate, problem, experiment["grid_n"], experiment["refine_iters"], self.pool))

        error = abs(result.d_hat - experiment["a_true"])
        summary: dict[str, Any] = {
            "estimate.d_hat": result.d_hat,
            "estimate.a_true": experiment["a_true"],
            "estimate.abs_error": error,
            "estimate.F_min": result.F_min,
        }
        summary.update({f"estimate.{key}": value for key, value in result.diagnostics.items()})
        if result.error_components is not None:
            summary.update({f"estimate.bound.{key}": value for key, value in result.error_components.as_dict().items()})

        lines = [
            f"d_hat = {result.d_hat:.6g} (true {experiment['a_true']}), |error| = {error:.4g}",
            f"F_min = {result.F_min:.6g} over {result.diagnostics['evaluations']} evaluations",
        ]
        if result.error_components is not None:
            lines.append(f"error bound ({result.error_components.label}) = {result.error_components.bound:.4g}")
        table = Table(["d", "F", "stderr"], result.objective_curve)
        return ExperimentOutcome("estimate", error <= experiment["recovery_tol"], {"objective": table}, summary, lines)
