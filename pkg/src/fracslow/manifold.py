# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
# a converged path is an exact forward trajectory of the random system ending at V0
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
import math

from json_logging import get_logger
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import ModelSpec, Trajectory, contraction_factor, gap_mu, simulate_random
from .errors import ConvergenceError, HypothesisError, ParameterError
from .noise import FastPropagators, NoiseRealization, SlowPropagators, diagonal_recursion, fast_propagators, grid_steps, slow_propagators
from .spectral import x_grid

logger = get_logger(__name__)

Vector = NDArray[np.float64]


@dataclass(frozen=True)
class LPConfig:
    t_minus: float = 0.0
    dt: float = 1e-3
    tol: float = 1e-8
    max_iter: int = 50
    beta: float | None = None
    allow_gap_violation: bool = False

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ParameterError(f"tol must be positive, got {self.tol}")
        if not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if self.t_minus < 0:
            raise ParameterError(f"t_minus must be nonnegative, got {self.t_minus}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.beta is not None and not self.beta < 0:
            raise ParameterError(f"beta must be negative, got {self.beta}")


@dataclass(frozen=True, eq=False)
class ManifoldSolution:
    V0: Vector
    z_path: Trajectory
    H_value: Vector
    iterations: int
    contraction_estimate: float
    t_minus: float
    residuals: tuple[float, ...] = ()


def weight_rate(m: ModelSpec, cfg: LPConfig) -> float:
    return -cfg.beta if cfg.beta is not None else gap_mu(m) / m.eps


def effective_t_minus(m: ModelSpec, cfg: LPConfig) -> float:
    # max(configured, 3 eps ln(1/tol)/mu), rounded up onto the dt grid
    mu = gap_mu(m)
    needed = m.eps * math.log(1.0 / cfg.tol) / mu
    if 0.0 < cfg.t_minus < needed:
        logger.warning(f"[lp_solve] t_minus={cfg.t_minus} is shorter than eps*ln(1/tol)/mu={needed:.4g}; using {3.0 * needed:.4g}")
    t = max(cfg.t_minus, 3.0 * needed)
    return math.ceil(t / cfg.dt - 1e-9) * cfg.dt


def weighted_sup_norm(times: NDArray[np.float64], dU: NDArray[np.float64], dV: NDArray[np.float64], rate: float) -> float:
    """max_t e^{rate t} (||dU(t)|| + ||dV(t)||) over a grid on t <= 0."""
    return float(np.max(np.exp(rate * times) * (np.linalg.norm(dU, axis=1) + np.linalg.norm(dV, axis=1))))


def _backward(slow: SlowPropagators, V0: Vector, G: NDArray[np.float64]) -> NDArray[np.float64]:
    # V_{j+1} = E V_j + Phi G_j, solved backwards from V_n = V0
    n = G.shape[0]
    V = np.empty((n + 1, V0.size))
    V[n] = V0
    for j in range(n - 1, -1, -1):
        V[j] = slow.E_inv @ (V[j + 1] - slow.Phi @ G[j])
    return V


def _lp_map(
    m: ModelSpec,
    fast: FastPropagators,
    slow: SlowPropagators,
    etas: NDArray[np.float64],
    xis: NDArray[np.float64],
    V0: Vector,
    U: NDArray[np.float64],
    V: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    n = U.shape[0] - 1
    F = np.empty((n, m.n_modes))
    G = np.empty((n, m.slow_dim))
    for j in range(n):
        u, v = U[j] + etas[j], V[j] + xis[j]
        F[j] = m.f(u, v)
        G[j] = m.g(u, v, m.d)
    U_new = diagonal_recursion(fast.decay, fast.gain * F, np.zeros(m.n_modes))
    return U_new, _backward(slow, V0, G)


def _window(noise: NoiseRealization, times: NDArray[np.float64], dt: float) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    t_lo, t_hi = float(times[0]), float(times[-1])
    return noise.eta.values_on(t_lo, t_hi, dt), noise.xi.values_on(t_lo, t_hi, dt)


def _anchor(m: ModelSpec, V0: ArrayLike) -> Vector:
    v = np.asarray(V0, dtype=float).reshape(-1)
    if v.size != m.slow_dim:
        raise ParameterError(f"anchor has {v.size} components, model has {m.slow_dim}")
    return v


def lp_iterate(m: ModelSpec, ou: NoiseRealization, V0: ArrayLike, z: Trajectory) -> Trajectory:
    """One application of the truncated Lyapunov-Perron map to the candidate path z on [-T_minus, 0]."""
    if z.times.size < 2:
        raise ParameterError("candidate path needs at least two grid points")
    dt = z.dt
    v0 = _anchor(m, V0)
    etas, xis = _window(ou, z.times, dt)
    fast = fast_propagators(m.op, m.eps, m.sigma1, dt)
    slow = slow_propagators(m.J, 0.0, dt)
    U, V = _lp_map(m, fast, slow, etas, xis, v0, z.fast, z.slow)
    return Trajectory(times=z.times, fast=U, slow=V)


def _contraction_estimate(residuals: list[float]) -> float:
    ratios = [b / a for a, b in zip(residuals, residuals[1:]) if a > 1e-12]
    return max(ratios) if ratios else 0.0


def lp_solve(m: ModelSpec, ou: NoiseRealization, V0: ArrayLike, cfg: LPConfig | None = None) -> ManifoldSolution:
    cfg = cfg or LPConfig()
    bound = m.lambda1 * m.gamma2 / (2.0 * m.lambda1 + m.gamma2)
    if not m.K < bound:
        if not cfg.allow_gap_violation:
            raise HypothesisError(f"gap condition fails: K={m.K} is not below {bound:.6g}")
        logger.warning(f"[lp_solve] gap condition fails (K={m.K} >= {bound:.6g}); iterating anyway")

    v0 = _anchor(m, V0)
    t_minus = effective_t_minus(m, cfg)
    n = grid_steps(t_minus, cfg.dt, "t_minus")
    times = (np.arange(n + 1) - n) * cfg.dt
    etas, xis = _window(ou, times, cfg.dt)
    fast = fast_propagators(m.op, m.eps, m.sigma1, cfg.dt)
    slow = slow_propagators(m.J, 0.0, cfg.dt)
    weights_rate = weight_rate(m, cfg)

    # zero fast path, homogeneous slow path e^{Jt} V0
    U = np.zeros((n + 1, m.n_modes))
    V = _backward(slow, v0, np.zeros((n, m.slow_dim)))

    residuals: list[float] = []
    for iteration in range(1, cfg.max_iter + 1):
        U_new, V_new = _lp_map(m, fast, slow, etas, xis, v0, U, V)
        residuals.append(weighted_sup_norm(times, U_new - U, V_new - V, weights_rate))
        U, V = U_new, V_new
        if residuals[-1] < cfg.tol:
            estimate = _contraction_estimate(residuals)
            logger.debug(f"[lp_solve] V0={v0.tolist()} converged in {iteration} iterations, contraction {estimate:.3g}")
            return ManifoldSolution(
                V0=v0,
                z_path=Trajectory(times=times, fast=U, slow=V),
                H_value=U[-1].copy(),
                iterations=iteration,
                contraction_estimate=estimate,
                t_minus=t_minus,
                residuals=tuple(residuals),
            )

    estimate = _contraction_estimate(residuals)
    raise ConvergenceError(
        f"[lp_solve] no convergence in {cfg.max_iter} iterations (last change {residuals[-1]:.3g}, contraction {estimate:.3g})",
        iterations=cfg.max_iter,
        contraction_estimate=estimate,
    )


def h0_leading_order(m: ModelSpec, V0: ArrayLike, eta: ArrayLike | None = None, max_iter: int = 200, tol: float = 1e-14) -> Vector:
    # stationary balance (-A) H0 = f(H0 + eta, V0)
    v = np.asarray(V0, dtype=float).reshape(-1)
    e = np.zeros(m.n_modes) if eta is None else np.asarray(eta, dtype=float)
    lam = m.op.eigenvalues
    if not m.f_uses_fast:
        return np.asarray(m.f(e, v), dtype=float) / lam

    damping = 0.7
    H = np.zeros(m.n_modes)
    for _ in range(max_iter):
        step = np.asarray(m.f(H + e, v), dtype=float) / lam - H
        H = H + damping * step
        if np.linalg.norm(step) <= tol * max(1.0, float(np.linalg.norm(H))):
            return H
    raise ConvergenceError(f"[h0_leading_order] fixed point did not converge in {max_iter} iterations", iterations=max_iter)


class LeadingOrderManifold:
    def __init__(self, m: ModelSpec) -> None:
        self.m = m

    def __call__(self, noise: NoiseRealization, t: float, V: Vector, eta_t: Vector, xi_t: Vector) -> Vector:
        return h0_leading_order(self.m, V + xi_t, eta=eta_t)


class LyapunovPerronManifold:
    def __init__(self, m: ModelSpec, cfg: LPConfig) -> None:
        self.m = m
        self.cfg = cfg

    def __call__(self, noise: NoiseRealization, t: float, V: Vector, eta_t: Vector, xi_t: Vector) -> Vector:
        return lp_solve(self.m, noise.shift(t), V, self.cfg).H_value


def lipschitz_bound(m: ModelSpec) -> float:
    """K / ((lambda1 - mu)(1 - upsilon)), infinite when the contraction constant reaches 1."""
    upsilon = contraction_factor(m)
    if upsilon >= 1.0:
        return math.inf
    return m.K / ((m.lambda1 - gap_mu(m)) * (1.0 - upsilon))


@dataclass(frozen=True, eq=False)
class LipschitzReport:
    measured_lip: float
    bound: float
    passed: bool
    anchors: NDArray[np.float64]
    solutions: tuple[ManifoldSolution, ...]


def _anchors(m: ModelSpec, V_grid: ArrayLike) -> NDArray[np.float64]:
    anchors = np.asarray(V_grid, dtype=float)
    if anchors.ndim == 1:
        anchors = anchors.reshape(-1, 1) if m.slow_dim == 1 else anchors.reshape(1, -1)
    if anchors.shape[1] != m.slow_dim:
        raise ParameterError(f"anchors have {anchors.shape[1]} components, model has {m.slow_dim}")
    return anchors


def solve_anchors(m: ModelSpec, noise: NoiseRealization, V_grid: ArrayLike, cfg: LPConfig, executor: Executor | None = None) -> list[ManifoldSolution]:
    anchors = _anchors(m, V_grid)

    def solve(V0: Vector) -> ManifoldSolution:
        return lp_solve(m, noise, V0, cfg)

    if executor is None:
        return [solve(V0) for V0 in anchors]
    return list(executor.map(solve, anchors))


def lipschitz_estimate(
    m: ModelSpec,
    ou: NoiseRealization,
    V_grid: ArrayLike,
    cfg: LPConfig,
    slack: float = 0.1,
    executor: Executor | None = None,
) -> LipschitzReport:
    anchors = _anchors(m, V_grid)
    if anchors.shape[0] < 3:
        raise ParameterError(f"lipschitz_estimate needs at least 3 anchors, got {anchors.shape[0]}")

    solutions = solve_anchors(m, ou, anchors, cfg, executor)
    measured = 0.0
    for a, b in zip(solutions, solutions[1:]):
        dv = float(np.linalg.norm(a.V0 - b.V0))
        if dv > 0.0:
            measured = max(measured, float(np.linalg.norm(a.H_value - b.H_value)) / dv)

    bound = lipschitz_bound(m)
    return LipschitzReport(
        measured_lip=measured,
        bound=bound,
        passed=measured <= bound * (1.0 + slack),
        anchors=anchors,
        solutions=tuple(solutions),
    )


@dataclass(frozen=True, eq=False)
class GraphInvariance:
    times: NDArray[np.float64]
    defects: NDArray[np.float64]
    scale: float

    @property
    def worst_relative(self) -> float:
        return float(np.max(self.defects)) / self.scale if self.scale > 0 else float(np.max(self.defects))


def graph_invariance_defect(m: ModelSpec, ou: NoiseRealization, V0: ArrayLike, s_grid: ArrayLike, cfg: LPConfig) -> GraphInvariance:
    """Distance of U(s) from the fiber H(theta_s omega, V(s)) along a trajectory started on the manifold."""
    s_values = np.atleast_1d(np.asarray(s_grid, dtype=float))
    if np.any(s_values < 0):
        raise ParameterError("graph invariance is checked forward in time, s >= 0")
    start = lp_solve(m, ou, V0, cfg)
    horizon = max(float(np.max(s_values)), cfg.dt)
    traj = simulate_random(m, ou, start.H_value, start.V0, horizon, cfg.dt)

    defects = []
    for s in s_values:
        j = grid_steps(float(s), cfg.dt, "s")
        fiber = lp_solve(m, ou.shift(float(s)), traj.slow[j], cfg).H_value
        defects.append(float(np.linalg.norm(traj.fast[j] - fiber)))
    return GraphInvariance(times=s_values, defects=np.array(defects), scale=float(np.linalg.norm(start.H_value)))


def manifold_table(m: ModelSpec, solutions: list[ManifoldSolution] | tuple[ManifoldSolution, ...], points: int = 101) -> tuple[list[str], NDArray[np.float64]]:
    xs = x_grid(points)
    columns = [f"V0_{i + 1}" for i in range(m.slow_dim)]
    columns += [f"H_{k + 1}" for k in range(m.n_modes)]
    columns += [f"u_x{j:03d}" for j in range(points)]
    rows = [np.concatenate([s.V0, s.H_value, m.op.reconstruct(s.H_value, xs)]) for s in solutions]
    return columns, np.vstack(rows)
