# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
import math
import threading
from typing import Any, Callable, Iterable, Literal

from json_logging import get_logger
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import ManifoldEvaluator, ModelSpec, Trajectory, realize_noise, simulate_full, simulate_reduced
from .errors import EstimationError, ParameterError
from .manifold import LeadingOrderManifold, LPConfig, LyapunovPerronManifold, effective_t_minus
from .noise import NoiseRealization, slow_propagators

logger = get_logger(__name__)

ManifoldMode = Literal["leading_order", "lyapunov_perron"]
ObservationSource = Literal["full", "reduced"]

PHI_RATIO = 2.0 / (1.0 + math.sqrt(5.0))
G_FLOOR = 1e-12
INDEPENDENT_SEED_OFFSET = 1_000_000


@dataclass(frozen=True, eq=False)
class Observation:
    trajectory: Trajectory
    seed: int
    u0: NDArray[np.float64] | None = None


def make_evaluator(m: ModelSpec, mode: ManifoldMode, lp_config: LPConfig | None = None) -> ManifoldEvaluator:
    if mode == "leading_order":
        return LeadingOrderManifold(m)
    if mode == "lyapunov_perron":
        return LyapunovPerronManifold(m, lp_config or LPConfig())
    raise ParameterError(f"unknown manifold mode '{mode}'")


@dataclass(eq=False)
class EstimationProblem:
    model: ModelSpec
    lambda_range: tuple[float, float]
    observations: list[Observation]
    n_mc: int
    v0: NDArray[np.float64]
    t_minus: float = 0.0
    shared_seeds: bool = True
    manifold_mode: ManifoldMode = "leading_order"
    lp_config: LPConfig | None = None
    mc_seed: int = 0
    _noise: dict[int, NoiseRealization] = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self) -> None:
        lo, hi = (float(x) for x in self.lambda_range)
        if not lo < hi:
            raise ParameterError(f"lambda_range must satisfy lo < hi, got [{lo}, {hi}]")
        self.lambda_range = (lo, hi)
        if not self.observations:
            raise ParameterError("at least one observation is required")
        if self.n_mc < 1:
            raise ParameterError(f"n_mc must be >= 1, got {self.n_mc}")
        self.v0 = np.asarray(self.v0, dtype=float).reshape(-1)
        if self.v0.size != self.model.slow_dim:
            raise ParameterError(f"v0 has {self.v0.size} components, model has {self.model.slow_dim}")

        times = self.observations[0].trajectory.times
        if times.size < 2 or times[0] != 0.0:
            raise ParameterError("observations must start at t = 0 and contain at least two samples")
        steps = np.diff(times)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise ParameterError("observation grid must be uniform")
        for obs in self.observations[1:]:
            if obs.trajectory.times.shape != times.shape or not np.allclose(obs.trajectory.times, times, rtol=0.0, atol=1e-12):
                raise ParameterError(f"observation seed={obs.seed} is on a different grid")

        if self.manifold_mode == "lyapunov_perron":
            cfg = self.lp_config or LPConfig(dt=self.dt)
            self.lp_config = cfg
            needed = effective_t_minus(self.model, cfg)
            if self.t_minus < needed - 1e-12:
                raise ParameterError(f"t_minus={self.t_minus} does not cover the Lyapunov-Perron window {needed:.4g}")

    @property
    def times(self) -> NDArray[np.float64]:
        return self.observations[0].trajectory.times

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def pairs(self) -> list[tuple[Observation, int]]:
        out = []
        for r in range(self.n_mc):
            obs = self.observations[r % len(self.observations)]
            seed = obs.seed if self.shared_seeds else self.mc_seed + INDEPENDENT_SEED_OFFSET + r
            out.append((obs, seed))
        return out

    def noise(self, seed: int) -> NoiseRealization:
        with self._lock:
            cached = self._noise.get(seed)
            if cached is None:
                cached = realize_noise(self.model, seed, -self.t_minus, self.T, self.dt)
                self._noise[seed] = cached
            return cached

    def evaluator(self, m: ModelSpec) -> ManifoldEvaluator:
        return make_evaluator(m, self.manifold_mode, self.lp_config)

    def contains(self, d: float) -> bool:
        lo, hi = self.lambda_range
        span = hi - lo
        return lo - 1e-12 * span <= d <= hi + 1e-12 * span


def synthesize_observations(
    m: ModelSpec,
    d_true: float,
    seeds: Iterable[int],
    v0: ArrayLike,
    T: float,
    dt: float,
    t_minus: float = 0.0,
    source: ObservationSource = "full",
    manifold_mode: ManifoldMode = "leading_order",
    lp_config: LPConfig | None = None,
) -> list[Observation]:
    model = m.with_param(d_true)
    v = np.asarray(v0, dtype=float).reshape(-1)
    leading = LeadingOrderManifold(model)
    evaluator = make_evaluator(model, manifold_mode, lp_config)

    observations = []
    for seed in seeds:
        noise = realize_noise(model, seed, -t_minus, T, dt)
        eta0, xi0 = noise.eta.value_at(0.0), noise.xi.value_at(0.0)
        u0 = leading(noise, 0.0, v - xi0, eta0, xi0) + eta0
        if source == "full":
            traj = simulate_full(model, noise, u0, v, T, dt)
        elif source == "reduced":
            traj = simulate_reduced(model, evaluator, noise, v, d_true, T, dt)
        else:
            raise ParameterError(f"unknown observation source '{source}'")
        observations.append(Observation(trajectory=traj, seed=seed, u0=u0))
    return observations


@dataclass(frozen=True, eq=False)
class ObjectiveStats:
    d: float
    mean: float
    stderr: float
    values: NDArray[np.float64]


def _reduced(p: EstimationProblem, m: ModelSpec, evaluator: ManifoldEvaluator, obs: Observation, seed: int, d: float) -> Trajectory:
    return simulate_reduced(m, evaluator, p.noise(seed), p.v0, d, p.T, p.dt)


def objective_stats(p: EstimationProblem, d: float) -> ObjectiveStats:
    if not p.contains(d):
        raise ParameterError(f"d={d} lies outside the parameter range {p.lambda_range}")
    model = p.model.with_param(d)
    evaluator = p.evaluator(model)

    values = np.empty(p.n_mc)
    for r, (obs, seed) in enumerate(p.pairs()):
        traj = _reduced(p, model, evaluator, obs, seed, d)
        sq_gap = np.sum((obs.trajectory.slow - traj.slow) ** 2, axis=1)
        values[r] = np.trapezoid(sq_gap, p.times)

    mean = float(np.mean(values))
    if not math.isfinite(mean):
        raise EstimationError(f"objective is not finite at d={d}", d=d)
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return ObjectiveStats(d=float(d), mean=mean, stderr=stderr, values=values)


def objective(p: EstimationProblem, d: float) -> float:
    return objective_stats(p, d).mean


@dataclass(frozen=True)
class SearchResult:
    x_best: float
    f_best: float
    evaluations: tuple[tuple[float, float], ...]


def _finite(x: float, value: float) -> float:
    if not math.isfinite(value):
        raise EstimationError(f"objective is not finite at d={x}", d=x)
    return value


def golden_section(fun: Callable[[float], float], lo: float, hi: float, iterations: int) -> list[tuple[float, float]]:
    seen: list[tuple[float, float]] = []

    def evaluate(x: float) -> float:
        value = _finite(x, fun(x))
        seen.append((x, value))
        return value

    x1 = hi - PHI_RATIO * (hi - lo)
    x2 = lo + PHI_RATIO * (hi - lo)
    f1, f2 = evaluate(x1), evaluate(x2)
    for _ in range(iterations):
        if f2 > f1:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - PHI_RATIO * (hi - lo)
            f1 = evaluate(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + PHI_RATIO * (hi - lo)
            f2 = evaluate(x2)
    return seen


def minimize_over_range(
    fun: Callable[[float], float],
    lo: float,
    hi: float,
    grid_n: int = 21,
    refine_iters: int = 40,
    executor: Executor | None = None,
) -> SearchResult:
    """Coarse grid over [lo, hi], then golden-section on the cells around the best grid point."""
    if grid_n < 5:
        raise ParameterError(f"grid_n must be >= 5, got {grid_n}")
    if not lo < hi:
        raise ParameterError(f"range must satisfy lo < hi, got [{lo}, {hi}]")

    grid = [float(x) for x in np.linspace(lo, hi, grid_n)]
    values = list(executor.map(fun, grid)) if executor is not None else [fun(x) for x in grid]
    evaluations = [(x, _finite(x, v)) for x, v in zip(grid, values)]

    best = int(np.argmin(values))
    if refine_iters > 0:
        a, b = grid[max(best - 1, 0)], grid[min(best + 1, grid_n - 1)]
        evaluations += golden_section(fun, a, b, refine_iters)

    x_best, f_best = min(evaluations, key=lambda e: e[1])
    return SearchResult(x_best=x_best, f_best=f_best, evaluations=tuple(evaluations))


@dataclass(frozen=True)
class ErrorBound:
    G_value: float
    G_sensitivity: dict[str, float]
    eps_term: float
    obs_terms: tuple[float, float, float]
    manifold_offset: float
    bound: float
    informative: bool
    label: str = "diagnostic"

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "G_value": self.G_value,
            "eps_term": self.eps_term,
            "obs_term_fast": self.obs_terms[0],
            "obs_term_slow": self.obs_terms[1],
            "obs_term_mean": self.obs_terms[2],
            "manifold_offset": self.manifold_offset,
            "bound": self.bound,
            "informative": self.informative,
            "label": self.label,
        }
        out.update({f"G_at_{key}": value for key, value in self.G_sensitivity.items()})
        return out


@dataclass(frozen=True, eq=False)
class EstimationResult:
    d_hat: float
    objective_curve: NDArray[np.float64]
    F_min: float
    error_components: ErrorBound | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)


def grad_d_g(m: ModelSpec, u: ArrayLike, v: ArrayLike, d: float, step: float | None = None) -> NDArray[np.float64]:
    h = step if step is not None else 1e-5 * max(1.0, abs(d))
    u_arr, v_arr = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    return (np.asarray(m.g(u_arr, v_arr, d + h)) - np.asarray(m.g(u_arr, v_arr, d - h))) / (2.0 * h)


def error_terms(lip_f: float, lip_g: float, lambda1: float, eps: float, T: float, F: float, manifold_offset: float, C: float = 1.0) -> tuple[float, tuple[float, float, float]]:
    """Right-hand-side terms of the estimation error bound, before division by G."""
    eps_term = C * lip_g * manifold_offset * eps / (lambda1 - C * lip_f)
    root = math.sqrt(max(F, 0.0))
    obs_terms = (
        C * lip_f * lip_g / (lambda1 - C * lip_f) * math.sqrt(T) * root,
        lip_g * math.sqrt(T) * root,
        root / T,
    )
    return eps_term, obs_terms


def sensitivity_G(p: EstimationProblem, d: float, t_stars: Iterable[float]) -> dict[float, float]:
    model = p.model.with_param(d)
    evaluator = p.evaluator(model)
    E_inv = slow_propagators(model.J, 0.0, p.dt).E_inv
    stars = list(t_stars)
    totals = {t: 0.0 for t in stars}
    pairs = p.pairs()

    for obs, seed in pairs:
        traj = _reduced(p, model, evaluator, obs, seed, d)
        integrand = np.empty((traj.times.size, model.slow_dim))
        propagator = np.eye(model.slow_dim)
        for j in range(traj.times.size):
            integrand[j] = propagator @ grad_d_g(model, traj.fast[j], traj.slow[j], d)
            propagator = propagator @ E_inv
        for t in stars:
            k = int(round(t / p.dt))
            vec = np.trapezoid(integrand[: k + 1], traj.times[: k + 1], axis=0) if k > 0 else np.zeros(model.slow_dim)
            totals[t] += float(np.linalg.norm(vec))
    return {t: total / len(pairs) for t, total in totals.items()}


def error_bound_report(p: EstimationProblem, result: EstimationResult) -> ErrorBound:
    m = p.model
    evaluator = p.evaluator(m.with_param(result.d_hat))

    offsets = []
    for obs in p.observations:
        if obs.u0 is None:
            continue
        noise = p.noise(obs.seed)
        eta0, xi0 = noise.eta.value_at(0.0), noise.xi.value_at(0.0)
        on_manifold = evaluator(noise, 0.0, p.v0 - xi0, eta0, xi0)
        offsets.append(float(np.linalg.norm(obs.u0 - eta0 - on_manifold)))
    if not offsets:
        logger.warning("[error_bound_report] no observation carries its initial fast state; manifold offset taken as 0")
    offset = float(np.mean(offsets)) if offsets else 0.0

    eps_term, obs_terms = error_terms(m.lip_f, m.lip_g, m.lambda1, m.eps, p.T, result.F_min, offset)
    T = p.T
    G = sensitivity_G(p, result.d_hat, (T / 4.0, T / 2.0, 3.0 * T / 4.0))
    G_mid = G[T / 2.0]
    informative = G_mid >= G_FLOOR
    bound = (eps_term + sum(obs_terms)) / G_mid if informative else math.inf
    if not informative:
        logger.warning(f"[error_bound_report] G={G_mid:.3g} is below {G_FLOOR}; the bound is not informative")

    return ErrorBound(
        G_value=G_mid,
        G_sensitivity={"T/4": G[T / 4.0], "T/2": G_mid, "3T/4": G[3.0 * T / 4.0]},
        eps_term=eps_term,
        obs_terms=obs_terms,
        manifold_offset=offset,
        bound=bound,
        informative=informative,
    )


def estimate(p: EstimationProblem, grid_n: int = 21, refine_iters: int = 40, executor: Executor | None = None) -> EstimationResult:
    lo, hi = p.lambda_range
    if grid_n < 5:
        raise ParameterError(f"grid_n must be >= 5, got {grid_n}")

    # realize every noise sample once, before any fan-out
    for _, seed in p.pairs():
        p.noise(seed)

    stats: dict[float, ObjectiveStats] = {}

    def fun(d: float) -> float:
        s = objective_stats(p, d)
        stats[d] = s
        return s.mean

    search = minimize_over_range(fun, lo, hi, grid_n=grid_n, refine_iters=refine_iters, executor=executor)
    curve = np.array(sorted((d, s.mean, s.stderr) for d, s in stats.items()))
    logger.info(f"[estimate] d_hat={search.x_best:.6g} F_min={search.f_best:.6g} after {len(search.evaluations)} objective evaluations")

    result = EstimationResult(
        d_hat=search.x_best,
        objective_curve=curve,
        F_min=search.f_best,
        diagnostics={
            "grid_n": grid_n,
            "refine_iters": refine_iters,
            "evaluations": len(search.evaluations),
            "n_mc": p.n_mc,
            "shared_seeds": p.shared_seeds,
            "manifold_mode": p.manifold_mode,
            "stderr_at_min": stats[search.x_best].stderr,
        },
    )
    return replace(result, error_components=error_bound_report(p, result))
