# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Literal

from json_logging import get_logger
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dynamics import ModelSpec, contraction_factor, gap_mu, simulate_random
from .errors import ConvergenceError, ParameterError
from .manifold import LPConfig, ManifoldSolution, lp_solve
from .noise import NoiseRealization, grid_steps, slow_propagators

logger = get_logger(__name__)

Projection = Literal["fiber", "shooting"]
GAP_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ProjectedState:
    U: NDArray[np.float64]
    V: NDArray[np.float64]
    method: str
    iterations: int
    solution: ManifoldSolution


@dataclass(frozen=True, eq=False)
class TrackingReport:
    times: NDArray[np.float64]
    gaps: NDArray[np.float64]
    envelope: NDArray[np.float64]
    fitted_rate: float
    bound_rate: float
    bound_prefactor: float
    passed: bool
    projection: str
    Z0: tuple[NDArray[np.float64], NDArray[np.float64]]
    Z0_projected: tuple[NDArray[np.float64], NDArray[np.float64]]

    def table(self) -> NDArray[np.float64]:
        return np.column_stack([self.times, self.gaps, self.envelope])


def _split(m: ModelSpec, Z0: tuple[ArrayLike, ArrayLike]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    U0 = np.asarray(Z0[0], dtype=float).reshape(-1)
    V0 = np.asarray(Z0[1], dtype=float).reshape(-1)
    if U0.size != m.n_modes or V0.size != m.slow_dim:
        raise ParameterError(f"initial state has shapes ({U0.size}, {V0.size}), model expects ({m.n_modes}, {m.slow_dim})")
    return U0, V0


def _slow_drift(m: ModelSpec, ou: NoiseRealization, U: NDArray[np.float64], V: NDArray[np.float64], dt: float) -> NDArray[np.float64]:
    t_hi = (U.shape[0] - 1) * dt
    etas = ou.eta.values_on(0.0, t_hi, dt)
    xis = ou.xi.values_on(0.0, t_hi, dt)
    return np.array([m.g(U[j] + etas[j], V[j] + xis[j], m.d) for j in range(U.shape[0] - 1)])


def project_to_manifold(
    m: ModelSpec,
    ou: NoiseRealization,
    Z0: tuple[ArrayLike, ArrayLike],
    cfg: LPConfig | None = None,
    method: Projection = "fiber",
    horizon: float | None = None,
    max_iter: int = 50,
    tol: float = 1e-14,
) -> ProjectedState:
    """Pick a point on the manifold whose trajectory the one from Z0 tracks.

    "fiber" keeps the slow component, Vt = V0. "shooting" solves for the slow component
    Vt = V0 + sum_n E^{-(n+1)} Phi (g_n(Z0) - g_n(Zt)) by fixed-point iteration over a
    finite horizon, which makes the slow gap vanish along with the fast one.
    """
    cfg = cfg or LPConfig()
    U0, V0 = _split(m, Z0)
    solution = lp_solve(m, ou, V0, cfg)
    if method == "fiber":
        return ProjectedState(U=solution.H_value, V=V0, method=method, iterations=0, solution=solution)
    if method != "shooting":
        raise ParameterError(f"unknown projection method '{method}'")

    horizon = horizon if horizon is not None else 20.0 * m.eps / gap_mu(m)
    n = math.ceil(horizon / cfg.dt - 1e-9)
    T = n * cfg.dt
    slow = slow_propagators(m.J, 0.0, cfg.dt)

    source = simulate_random(m, ou, U0, V0, T, cfg.dt)
    g_source = _slow_drift(m, ou, source.fast, source.slow, cfg.dt)

    V_tilde = V0.copy()
    for iteration in range(1, max_iter + 1):
        target = simulate_random(m, ou, solution.H_value, V_tilde, T, cfg.dt)
        dG = g_source - _slow_drift(m, ou, target.fast, target.slow, cfg.dt)
        # Horner form of sum_n E^{-(n+1)} Phi dG_n
        acc = np.zeros(m.slow_dim)
        for j in range(n - 1, -1, -1):
            acc = slow.E_inv @ (acc + slow.Phi @ dG[j])
        V_next = V0 + acc
        change = float(np.linalg.norm(V_next - V_tilde))
        if change == 0.0:
            return ProjectedState(U=solution.H_value, V=V_tilde, method=method, iterations=iteration, solution=solution)
        V_tilde = V_next
        solution = lp_solve(m, ou, V_tilde, cfg)
        if change <= tol * max(1.0, float(np.linalg.norm(V_tilde))):
            logger.debug(f"[project_to_manifold] shooting converged in {iteration} iterations, slow shift {float(np.linalg.norm(V_tilde - V0)):.3g}")
            return ProjectedState(U=solution.H_value, V=V_tilde, method=method, iterations=iteration, solution=solution)
    raise ConvergenceError(f"[project_to_manifold] shooting did not converge in {max_iter} iterations", iterations=max_iter)


def fit_decay_rate(times: NDArray[np.float64], gaps: NDArray[np.float64], t_start: float, floor: float = GAP_FLOOR) -> float:
    # least-squares slope of -log(gap) over t >= t_start and gap > floor
    mask = (times >= t_start) & (gaps > floor)
    if np.count_nonzero(mask) < 3:
        return math.inf
    slope = np.polyfit(times[mask], np.log(gaps[mask]), 1)[0]
    return float(-slope)


def tracking_verify(
    m: ModelSpec,
    ou: NoiseRealization,
    Z0: tuple[ArrayLike, ArrayLike],
    T: float,
    dt: float,
    cfg: LPConfig | None = None,
    projection: Projection = "shooting",
    slack: float = 0.1,
    floor: float = GAP_FLOOR,
) -> TrackingReport:
    cfg = cfg or LPConfig(dt=dt)
    mu = gap_mu(m)
    if T < 10.0 * m.eps / mu * (1.0 - 1e-9):
        raise ParameterError(f"T={T} is too short to resolve the decay; need T >= 10 eps/mu = {10.0 * m.eps / mu:.4g}")
    grid_steps(T, dt, "T")

    U0, V0 = _split(m, Z0)
    projected = project_to_manifold(m, ou, (U0, V0), cfg, method=projection)
    original = simulate_random(m, ou, U0, V0, T, dt)
    tracked = simulate_random(m, ou, projected.U, projected.V, T, dt)

    times = original.times
    gaps = np.linalg.norm(original.fast - tracked.fast, axis=1) + np.linalg.norm(original.slow - tracked.slow, axis=1)
    rate = mu / m.eps
    upsilon = contraction_factor(m)
    prefactor = 1.0 / (1.0 - upsilon) if upsilon < 1.0 else math.inf
    envelope = prefactor * np.exp(-rate * times) * gaps[0]

    passed = bool(np.all(gaps <= np.maximum(envelope * (1.0 + slack), floor)))
    fitted = fit_decay_rate(times, gaps, t_start=2.0 * m.eps / mu, floor=floor)
    logger.info(f"[tracking_verify] projection={projection} fitted rate {fitted:.4g} vs bound {rate:.4g}, envelope {'holds' if passed else 'violated'}")
    return TrackingReport(
        times=times,
        gaps=gaps,
        envelope=envelope,
        fitted_rate=fitted,
        bound_rate=rate,
        bound_prefactor=prefactor,
        passed=passed,
        projection=projection,
        Z0=(U0, V0),
        Z0_projected=(projected.U, projected.V),
    )
