# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from __future__ import annotations

from dataclasses import dataclass, field, replace
import math
from typing import Callable, Protocol

from json_logging import get_logger
import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import expm

from .errors import NumericalError, ParameterError
from .noise import (
    NoiseRealization,
    OUPath,
    WienerPath,
    fast_forcing,
    fast_propagators,
    grid_steps,
    is_hurwitz,
    realize,
    slow_propagators,
)
from .spectral import DEFAULT_MODES, SpectralOperator, build_operator

logger = get_logger(__name__)

Vector = NDArray[np.float64]
FastMap = Callable[[Vector, Vector], Vector]
SlowMap = Callable[[Vector, Vector, float], Vector]

# base points for the Lipschitz spot check alternate between unit and this spread
FAR_SPOT = 100.0


@dataclass(frozen=True, eq=False)
class ModelSpec:
    op: SpectralOperator
    eps: float
    sigma1: float
    sigma2: float
    J: NDArray[np.float64]
    gamma2: float
    f: FastMap
    g: SlowMap
    lip_f: float
    lip_g: float
    d: float = 1.0
    f_uses_fast: bool = True
    name: str = "custom"

    def __post_init__(self) -> None:
        J = np.atleast_2d(np.asarray(self.J, dtype=float))
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ParameterError(f"J must be a square matrix, got shape {J.shape}")
        object.__setattr__(self, "J", J)
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ParameterError(f"noise intensities must be nonnegative, got sigma1={self.sigma1}, sigma2={self.sigma2}")
        if not self.gamma2 > 0:
            raise ParameterError(f"gamma2 must be positive, got {self.gamma2}")
        if self.lip_f < 0 or self.lip_g < 0:
            raise ParameterError(f"Lipschitz constants must be nonnegative, got lip_f={self.lip_f}, lip_g={self.lip_g}")

    @property
    def n_modes(self) -> int:
        return self.op.n_modes

    @property
    def slow_dim(self) -> int:
        return int(self.J.shape[0])

    @property
    def K(self) -> float:
        return max(self.lip_f, self.lip_g)

    @property
    def lambda1(self) -> float:
        return self.op.lambda1

    def with_param(self, d: float) -> ModelSpec:
        return replace(self, d=float(d))


def example2(
    alpha: float = 1.2,
    eps: float = 0.01,
    sigma1: float = 0.1,
    sigma2: float = 0.1,
    n_modes: int = DEFAULT_MODES,
    a: float = 1.0,
) -> ModelSpec:
    """u' = (1/eps)(A u + 0.01(sqrt(v^2 + 5) - sqrt(5))) + noise, v' = -v + 0.01 a sin(int u dx) + noise."""
    op = build_operator(alpha, n_modes)
    c = op.basis_const_coeffs
    root5 = math.sqrt(5.0)

    def f(u: Vector, v: Vector) -> Vector:
        return 0.01 * (math.sqrt(float(v[0]) ** 2 + 5.0) - root5) * c

    def g(u: Vector, v: Vector, d: float) -> Vector:
        return np.array([0.01 * d * math.sin(float(np.dot(u, c)))])

    return ModelSpec(
        op=op,
        eps=eps,
        sigma1=sigma1,
        sigma2=sigma2,
        J=np.array([[-1.0]]),
        gamma2=1.0,
        f=f,
        g=g,
        lip_f=0.01,
        lip_g=0.01 * abs(a),
        d=a,
        f_uses_fast=False,
        name="example2",
    )


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: NDArray[np.float64]
    fast: NDArray[np.float64]
    slow: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.times.ndim != 1 or self.times.size == 0:
            raise ParameterError("trajectory needs a nonempty 1-d time grid")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ParameterError("trajectory time grid must be strictly increasing")
        if self.fast.shape[0] != self.times.size or self.slow.shape[0] != self.times.size:
            raise ParameterError(f"trajectory lengths differ: times={self.times.size}, fast={self.fast.shape[0]}, slow={self.slow.shape[0]}")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def table(self) -> NDArray[np.float64]:
        return np.column_stack([self.times, self.fast, self.slow])


class ManifoldEvaluator(Protocol):
    """Returns the fast random-coordinate state U = H(theta_t omega, V) at grid time t."""

    def __call__(self, noise: NoiseRealization, t: float, V: Vector, eta_t: Vector, xi_t: Vector) -> Vector: ...


def contraction_factor(m: ModelSpec, eps: float | None = None) -> float:
    """K (1/(lambda1 - mu) + eps/(eps gamma2 + mu)), the Lyapunov-Perron contraction constant."""
    eps = m.eps if eps is None else eps
    mu = gap_mu(m)
    return m.K * (1.0 / (m.lambda1 - mu) + eps / (eps * m.gamma2 + mu))


def gap_mu(m: ModelSpec) -> float:
    return m.gamma2 / (2.0 * m.lambda1 + m.gamma2)


@dataclass(frozen=True)
class HypothesisReport:
    lambda1: float
    gamma2: float
    K: float
    mu: float
    lip_bound_rhs: float
    gap_ok: bool
    mu_in_unit: bool
    k_below_mu_lambda1: bool
    spectral_margin_ok: bool
    j_decay_ok: bool
    h2_ok: bool
    lipschitz_spot_ok: bool
    contraction: float
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return self.gap_ok and self.mu_in_unit and self.k_below_mu_lambda1 and self.spectral_margin_ok and self.j_decay_ok and self.h2_ok

    def as_dict(self) -> dict[str, float | bool]:
        return {
            "lambda1": self.lambda1,
            "gamma2": self.gamma2,
            "K": self.K,
            "mu": self.mu,
            "lip_bound_rhs": self.lip_bound_rhs,
            "gap_ok": self.gap_ok,
            "mu_in_unit": self.mu_in_unit,
            "k_below_mu_lambda1": self.k_below_mu_lambda1,
            "spectral_margin_ok": self.spectral_margin_ok,
            "j_decay_ok": self.j_decay_ok,
            "h2_ok": self.h2_ok,
            "lipschitz_spot_ok": self.lipschitz_spot_ok,
            "contraction": self.contraction,
            "passed": self.passed,
        }


def j_decay_check(J: ArrayLike, gamma2: float, horizon: float = 5.0, samples: int = 51) -> bool:
    mat = np.atleast_2d(np.asarray(J, dtype=float))
    for t in np.linspace(0.0, horizon, samples):
        if np.linalg.norm(expm(mat * t), 2) > math.exp(-gamma2 * t) * (1.0 + 1e-9):
            return False
    return True


def _unit(x: Vector) -> Vector:
    return x / np.linalg.norm(x)


def lipschitz_spot_check(m: ModelSpec, samples: int = 64, seed: int = 0, scale: float = 1.0, step: float = 1e-3) -> tuple[float, float]:
    # u and v move one at a time; each ratio divides by the norm of the argument that moved
    rng = np.random.default_rng([seed, 99])
    c = m.op.basis_const_coeffs
    h = step * scale
    worst_f = 0.0
    worst_g = 0.0
    for i in range(samples):
        spread = scale * (FAR_SPOT if i % 2 else 1.0)
        if i == 0:
            u, v = np.zeros(m.n_modes), np.zeros(m.slow_dim)
        else:
            u, v = rng.normal(0.0, spread, m.n_modes), rng.normal(0.0, spread, m.slow_dim)
        # half the fast moves point along the basis constant
        du = _unit(c) if i % 4 < 2 and np.any(c) else _unit(rng.normal(size=m.n_modes))
        dv = _unit(rng.normal(size=m.slow_dim))
        f0, g0 = m.f(u, v), m.g(u, v, m.d)
        for u2, v2 in ((u + h * du, v), (u, v + h * dv)):
            worst_f = max(worst_f, float(np.linalg.norm(m.f(u2, v2) - f0)) / h)
            worst_g = max(worst_g, float(np.linalg.norm(m.g(u2, v2, m.d) - g0)) / h)
    return worst_f, worst_g


def hypothesis_check(m: ModelSpec, spot_samples: int = 64) -> HypothesisReport:
    lam1 = m.lambda1
    mu = gap_mu(m)
    bound = lam1 * m.gamma2 / (2.0 * lam1 + m.gamma2)
    notes: list[str] = []

    zero_u, zero_v = np.zeros(m.n_modes), np.zeros(m.slow_dim)
    h2_ok = bool(np.allclose(m.f(zero_u, zero_v), 0.0, atol=1e-14) and np.allclose(m.g(zero_u, zero_v, m.d), 0.0, atol=1e-14))
    if not h2_ok:
        notes.append("f(0,0) or g(0,0,d) is nonzero")

    j_ok = is_hurwitz(m.J) and j_decay_check(m.J, m.gamma2)
    if not j_ok:
        notes.append(f"||e^(Jt)|| exceeds e^(-{m.gamma2} t) on the sampled horizon")
        logger.warning(f"[hypothesis_check] J does not decay at the declared rate gamma2={m.gamma2}")

    worst_f, worst_g = lipschitz_spot_check(m, samples=spot_samples)
    spot_ok = worst_f <= m.lip_f * (1.0 + 1e-9) and worst_g <= m.lip_g * (1.0 + 1e-9)
    if not spot_ok:
        notes.append(f"sampled Lipschitz ratios f={worst_f:.6g}, g={worst_g:.6g} exceed declared {m.lip_f:.6g}, {m.lip_g:.6g}")
        logger.warning(f"[hypothesis_check] sampled Lipschitz ratios (f={worst_f:.6g}, g={worst_g:.6g}) exceed the declared constants")

    return HypothesisReport(
        lambda1=lam1,
        gamma2=m.gamma2,
        K=m.K,
        mu=mu,
        lip_bound_rhs=bound,
        gap_ok=m.K < bound,
        mu_in_unit=0.0 < mu < 1.0,
        k_below_mu_lambda1=m.K < mu * lam1,
        spectral_margin_ok=lam1 - mu > m.K,
        j_decay_ok=j_ok,
        h2_ok=h2_ok,
        lipschitz_spot_ok=spot_ok,
        contraction=contraction_factor(m),
        notes=tuple(notes),
    )


def realize_noise(m: ModelSpec, seed: int, t_lo: float, t_hi: float, dt: float) -> NoiseRealization:
    return realize(m.op, m.eps, m.sigma1, m.J, m.sigma2, seed, t_lo, t_hi, dt)


def _wiener_pair(noise: NoiseRealization | tuple[WienerPath, WienerPath]) -> tuple[WienerPath, WienerPath]:
    if isinstance(noise, NoiseRealization):
        return noise.w_fast, noise.w_slow
    return noise


def _ou_pair(noise: NoiseRealization | tuple[OUPath, OUPath]) -> tuple[OUPath, OUPath]:
    if isinstance(noise, NoiseRealization):
        return noise.eta, noise.xi
    return noise


def _grid(T: float, dt: float) -> tuple[int, NDArray[np.float64]]:
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if not T > 0:
        raise ParameterError(f"T must be positive, got {T}")
    n = grid_steps(T, dt, "T")
    return n, np.arange(n + 1) * dt


def _initial(m: ModelSpec, u0: ArrayLike, v0: ArrayLike) -> tuple[Vector, Vector]:
    u = np.asarray(u0, dtype=float).reshape(-1).copy()
    v = np.asarray(v0, dtype=float).reshape(-1).copy()
    if u.size != m.n_modes:
        raise ParameterError(f"fast initial state has {u.size} coefficients, model has {m.n_modes} modes")
    if v.size != m.slow_dim:
        raise ParameterError(f"slow initial state has {v.size} components, model has {m.slow_dim}")
    return u, v


def _warn_step(m: ModelSpec, dt: float, where: str) -> None:
    if dt > m.eps / m.op.lambda_max:
        logger.warning(f"[{where}] dt={dt} exceeds eps/lambda_N={m.eps / m.op.lambda_max:.3g}")


def _check_finite(u: Vector, v: Vector, step: int, t: float, where: str) -> None:
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NumericalError(f"[{where}] non-finite state at step {step} (t={t:.6g})", step=step, time=t)


def simulate_full(
    m: ModelSpec,
    noise: NoiseRealization | tuple[WienerPath, WienerPath],
    u0: ArrayLike,
    v0: ArrayLike,
    T: float,
    dt: float,
) -> Trajectory:
    w_fast, w_slow = _wiener_pair(noise)
    n, times = _grid(T, dt)
    _warn_step(m, dt, "simulate_full")

    fast = fast_propagators(m.op, m.eps, m.sigma1, dt)
    slow = slow_propagators(m.J, m.sigma2, dt)
    fast_noise = fast_forcing(fast, w_fast.increments_on(0.0, times[-1], dt), dt)
    slow_noise = (w_slow.increments_on(0.0, times[-1], dt) / math.sqrt(dt)) @ slow.chol.T

    u, v = _initial(m, u0, v0)
    us = np.empty((n + 1, m.n_modes))
    vs = np.empty((n + 1, m.slow_dim))
    us[0], vs[0] = u, v
    for k in range(n):
        fu = m.f(u, v)
        gv = m.g(u, v, m.d)
        u = fast.decay * u + fast.gain * fu + fast_noise[k]
        v = slow.E @ v + slow.Phi @ gv + slow_noise[k]
        _check_finite(u, v, k + 1, times[k + 1], "simulate_full")
        us[k + 1], vs[k + 1] = u, v
    return Trajectory(times=times, fast=us, slow=vs)


def simulate_random(
    m: ModelSpec,
    ou: NoiseRealization | tuple[OUPath, OUPath],
    U0: ArrayLike,
    V0: ArrayLike,
    T: float,
    dt: float,
) -> Trajectory:
    """The transformed random system: drift arguments shifted by (eta, xi), no direct forcing."""
    eta, xi = _ou_pair(ou)
    n, times = _grid(T, dt)
    _warn_step(m, dt, "simulate_random")

    fast = fast_propagators(m.op, m.eps, m.sigma1, dt)
    slow = slow_propagators(m.J, 0.0, dt)
    etas = eta.values_on(0.0, times[-1], dt)
    xis = xi.values_on(0.0, times[-1], dt)

    U, V = _initial(m, U0, V0)
    Us = np.empty((n + 1, m.n_modes))
    Vs = np.empty((n + 1, m.slow_dim))
    Us[0], Vs[0] = U, V
    for k in range(n):
        u, v = U + etas[k], V + xis[k]
        fu = m.f(u, v)
        gv = m.g(u, v, m.d)
        U = fast.decay * U + fast.gain * fu
        V = slow.E @ V + slow.Phi @ gv
        _check_finite(U, V, k + 1, times[k + 1], "simulate_random")
        Us[k + 1], Vs[k + 1] = U, V
    return Trajectory(times=times, fast=Us, slow=Vs)


def simulate_reference(
    m: ModelSpec,
    noise: NoiseRealization | tuple[WienerPath, WienerPath],
    u0: ArrayLike,
    v0: ArrayLike,
    T: float,
    dt: float,
    substeps: int = 100,
) -> Trajectory:
    # plain Euler-Maruyama on dt/substeps, sampled every dt
    w_fast, w_slow = _wiener_pair(noise)
    n, times = _grid(T, dt)
    h = dt / substeps
    if h > 2.0 * m.eps / m.op.lambda_max:
        logger.warning(f"[simulate_reference] step {h:.3g} is beyond the explicit stability limit {2.0 * m.eps / m.op.lambda_max:.3g}")

    dW1 = w_fast.increments_on(0.0, times[-1], h)
    dW2 = w_slow.increments_on(0.0, times[-1], h)
    lam = m.op.eigenvalues
    s1 = m.sigma1 / math.sqrt(m.eps)

    u, v = _initial(m, u0, v0)
    us = np.empty((n + 1, m.n_modes))
    vs = np.empty((n + 1, m.slow_dim))
    us[0], vs[0] = u, v
    for k in range(n * substeps):
        du = h * (-lam * u + m.f(u, v)) / m.eps + s1 * dW1[k]
        dv = h * (m.J @ v + m.g(u, v, m.d)) + m.sigma2 * dW2[k]
        u, v = u + du, v + dv
        if (k + 1) % substeps == 0:
            j = (k + 1) // substeps
            _check_finite(u, v, j, times[j], "simulate_reference")
            us[j], vs[j] = u, v
    return Trajectory(times=times, fast=us, slow=vs)


def simulate_reduced(
    m: ModelSpec,
    H: ManifoldEvaluator,
    ou: NoiseRealization,
    v0: ArrayLike,
    d: float,
    T: float,
    dt: float,
) -> Trajectory:
    """Reduced slow system on the manifold.

    Integrates Vbar' = J Vbar + g(H(theta_t omega, Vbar) + eta, Vbar + xi, d) from Vbar(0) = v0 - xi(0)
    and reports v_s = Vbar + xi with the fast state u = H + eta.
    """
    n, times = _grid(T, dt)
    slow = slow_propagators(m.J, 0.0, dt)
    etas = ou.eta.values_on(0.0, times[-1], dt)
    xis = ou.xi.values_on(0.0, times[-1], dt)

    v = np.asarray(v0, dtype=float).reshape(-1)
    if v.size != m.slow_dim:
        raise ParameterError(f"slow initial state has {v.size} components, model has {m.slow_dim}")
    V = v - xis[0]

    us = np.empty((n + 1, m.n_modes))
    vs = np.empty((n + 1, m.slow_dim))
    for k in range(n + 1):
        U = H(ou, float(times[k]), V, etas[k], xis[k])
        us[k] = U + etas[k]
        vs[k] = V + xis[k]
        _check_finite(us[k], vs[k], k, times[k], "simulate_reduced")
        if k < n:
            V = slow.E @ V + slow.Phi @ m.g(us[k], vs[k], d)
    return Trajectory(times=times, fast=us, slow=vs)
