# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
# paths live on t_j = (i0 + j) * dt with an integer offset i0, so theta_s is a re-indexing
from __future__ import annotations

from dataclasses import dataclass, replace
import math
from typing import TypeVar

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cholesky, expm, solve_continuous_lyapunov
from scipy.signal import lfilter

from .errors import HypothesisError, OutOfWindowError, ParameterError
from .spectral import SpectralOperator

GRID_TOL = 1e-6

# substreams of one seed
_INCREMENTS = 0
_STATIONARY = 1


def grid_steps(t: float, dt: float, what: str = "time") -> int:
    k = t / dt
    j = int(round(k))
    if abs(k - j) > GRID_TOL:
        raise ParameterError(f"{what}={t} is not a multiple of dt={dt}")
    return j


@dataclass(frozen=True, eq=False)
class _GridPath:
    i0: int
    dt: float

    @property
    def n_steps(self) -> int:
        raise NotImplementedError

    @property
    def t0(self) -> float:
        return self.i0 * self.dt

    @property
    def t1(self) -> float:
        return (self.i0 + self.n_steps) * self.dt

    @property
    def times(self) -> NDArray[np.float64]:
        return (self.i0 + np.arange(self.n_steps + 1)) * self.dt

    def covers(self, t_lo: float, t_hi: float) -> bool:
        return self.t0 - GRID_TOL * self.dt <= t_lo and t_hi <= self.t1 + GRID_TOL * self.dt

    def index(self, t: float) -> int:
        k = t / self.dt
        j = int(round(k))
        if abs(k - j) > GRID_TOL:
            raise OutOfWindowError(f"t={t} is off the path grid (dt={self.dt})")
        idx = j - self.i0
        if idx < 0 or idx > self.n_steps:
            raise OutOfWindowError(f"t={t} outside the generated window [{self.t0}, {self.t1}]")
        return idx

    def stride(self, step: float | None) -> int:
        if step is None:
            return 1
        factor = grid_steps(step, self.dt, "step")
        if factor < 1:
            raise ParameterError(f"step must be a positive multiple of dt={self.dt}, got {step}")
        return factor

    def _span(self, t_lo: float, t_hi: float, step: float | None) -> tuple[int, int, int]:
        lo, hi = self.index(t_lo), self.index(t_hi)
        if hi < lo:
            raise ParameterError(f"empty window [{t_lo}, {t_hi}]")
        stride = self.stride(step)
        if (hi - lo) % stride:
            raise ParameterError(f"window [{t_lo}, {t_hi}] is not a whole number of steps of {step}")
        return lo, hi, stride


@dataclass(frozen=True, eq=False)
class WienerPath(_GridPath):
    increments: NDArray[np.float64]
    seed: int
    stream: int = 0

    @property
    def n_steps(self) -> int:
        return int(self.increments.shape[0])

    @property
    def dims(self) -> int:
        return int(self.increments.shape[1])

    def cumulative(self) -> NDArray[np.float64]:
        return np.vstack([np.zeros((1, self.dims)), np.cumsum(self.increments, axis=0)])

    def value_at(self, t: float) -> NDArray[np.float64]:
        cum = self.cumulative()
        return cum[self.index(t)] - cum[self.index(0.0)]

    def increments_on(self, t_lo: float, t_hi: float, step: float | None = None) -> NDArray[np.float64]:
        lo, hi, stride = self._span(t_lo, t_hi, step)
        block = self.increments[lo:hi]
        if stride == 1:
            return block
        return block.reshape(-1, stride, self.dims).sum(axis=1)


@dataclass(frozen=True, eq=False)
class OUPath(_GridPath):
    values: NDArray[np.float64]
    rates: NDArray[np.float64]
    noise_scale: float
    seed: int = 0
    stream: int = 0

    @property
    def n_steps(self) -> int:
        return int(self.values.shape[0]) - 1

    @property
    def dims(self) -> int:
        return int(self.values.shape[1])

    def value_at(self, t: float) -> NDArray[np.float64]:
        return self.values[self.index(t)]

    def values_on(self, t_lo: float, t_hi: float, step: float | None = None) -> NDArray[np.float64]:
        lo, hi, stride = self._span(t_lo, t_hi, step)
        return self.values[lo : hi + 1 : stride]


P = TypeVar("P", WienerPath, OUPath)


def _trim(p: P, t_lo: float, t_hi: float) -> P:
    lo, hi = p.index(t_lo), p.index(t_hi)
    if hi <= lo:
        raise OutOfWindowError(f"window [{t_lo}, {t_hi}] is empty")
    if isinstance(p, WienerPath):
        return replace(p, i0=p.i0 + lo, increments=p.increments[lo:hi])
    return replace(p, i0=p.i0 + lo, values=p.values[lo : hi + 1])


def shift_path(p: P, s: float, window: tuple[float, float] | None = None) -> P:
    """theta_s: the returned path at time t is the input path at time t + s."""
    k = grid_steps(s, p.dt, "shift")
    shifted = replace(p, i0=p.i0 - k) if k else p
    if window is None:
        return shifted
    return _trim(shifted, *window)


def coarsen(path: WienerPath, factor: int) -> WienerPath:
    if factor < 1:
        raise ParameterError(f"coarsening factor must be >= 1, got {factor}")
    if path.i0 % factor or path.n_steps % factor:
        raise ParameterError(f"path grid does not align with a coarsening factor of {factor}")
    increments = path.increments.reshape(-1, factor, path.dims).sum(axis=1)
    return replace(path, i0=path.i0 // factor, dt=path.dt * factor, increments=increments)


def generate_wiener(t0: float, t1: float, dt: float, dims: int, seed: int, stream: int = 0) -> WienerPath:
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if not t0 < t1:
        raise ParameterError(f"window must satisfy t0 < t1, got [{t0}, {t1}]")
    if dims < 1:
        raise ParameterError(f"dims must be >= 1, got {dims}")
    if seed < 0 or stream < 0:
        raise ParameterError(f"seed and stream must be nonnegative, got {seed}, {stream}")

    k0 = t0 / dt
    if abs(k0 - round(k0)) > GRID_TOL:
        raise ParameterError(
            f"t0={t0} is off the global grid k*dt (dt={dt}) anchored at t=0; every path starts on that grid "
            "so shifted and restricted windows index the same increments"
        )
    i0 = int(round(k0))
    n = grid_steps(t1 - t0, dt, "t1 - t0")
    rng = np.random.default_rng([seed, stream, _INCREMENTS])
    increments = rng.normal(0.0, math.sqrt(dt), size=(n, dims))
    return WienerPath(i0=i0, dt=dt, increments=increments, seed=seed, stream=stream)


@dataclass(frozen=True, eq=False)
class FastPropagators:
    decay: NDArray[np.float64]
    gain: NDArray[np.float64]
    noise: NDArray[np.float64]


def fast_propagators(op: SpectralOperator, eps: float, sigma1: float, h: float) -> FastPropagators:
    """Per-mode exponential step of du = (1/eps)(A u + f) dt + (sigma1/sqrt(eps)) dW.

    decay = e^{-lambda h/eps}, gain = (1 - decay)/lambda multiplies f, and noise is the
    standard deviation of the exact stochastic convolution over one step.
    """
    x = op.eigenvalues * h / eps
    decay = np.exp(-x)
    gain = -np.expm1(-x) / op.eigenvalues
    noise = sigma1 * np.sqrt(-np.expm1(-2.0 * x) / (2.0 * op.eigenvalues))
    return FastPropagators(decay=decay, gain=gain, noise=noise)


def fast_forcing(prop: FastPropagators, increments: NDArray[np.float64], h: float) -> NDArray[np.float64]:
    return prop.noise * (increments / math.sqrt(h))


def _as_matrix(J: ArrayLike) -> NDArray[np.float64]:
    mat = np.atleast_2d(np.asarray(J, dtype=float))
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ParameterError(f"J must be a square matrix, got shape {mat.shape}")
    return mat


def is_hurwitz(J: ArrayLike) -> bool:
    return bool(np.max(np.linalg.eigvals(_as_matrix(J)).real) < 0.0)


@dataclass(frozen=True, eq=False)
class SlowPropagators:
    E: NDArray[np.float64]
    E_inv: NDArray[np.float64]
    Phi: NDArray[np.float64]
    chol: NDArray[np.float64]
    stationary_cov: NDArray[np.float64]


def slow_propagators(J: ArrayLike, sigma2: float, h: float) -> SlowPropagators:
    mat = _as_matrix(J)
    m = mat.shape[0]

    E = expm(mat * h)
    E_inv = expm(-mat * h)

    aug = np.zeros((2 * m, 2 * m))
    aug[:m, :m] = mat
    aug[:m, m:] = np.eye(m)
    Phi = expm(aug * h)[:m, m:]

    if sigma2 == 0.0:
        return SlowPropagators(E=E, E_inv=E_inv, Phi=Phi, chol=np.zeros((m, m)), stationary_cov=np.zeros((m, m)))
    if not is_hurwitz(mat):
        raise HypothesisError("J must be stable (all eigenvalues with negative real part) for a stationary slow noise")

    # stationary P solves J P + P J^T + sigma2^2 I = 0; one-step covariance is P - E P E^T
    P_cov = solve_continuous_lyapunov(mat, -(sigma2**2) * np.eye(m))
    P_cov = 0.5 * (P_cov + P_cov.T)
    Q = P_cov - E @ P_cov @ E.T
    Q = 0.5 * (Q + Q.T)
    return SlowPropagators(E=E, E_inv=E_inv, Phi=Phi, chol=cholesky(Q, lower=True), stationary_cov=P_cov)


def diagonal_recursion(decay: NDArray[np.float64], forcing: NDArray[np.float64], y0: NDArray[np.float64]) -> NDArray[np.float64]:
    out = np.empty((forcing.shape[0] + 1, forcing.shape[1]))
    out[0] = y0
    for k in range(forcing.shape[1]):
        out[1:, k] = lfilter([1.0], [1.0, -decay[k]], forcing[:, k], zi=[decay[k] * y0[k]])[0]
    return out


def linear_recursion(E: NDArray[np.float64], forcing: NDArray[np.float64], y0: NDArray[np.float64]) -> NDArray[np.float64]:
    # y_{n+1} = E y_n + forcing_n
    if E.shape == (1, 1):
        return diagonal_recursion(E[0], forcing, y0)
    out = np.empty((forcing.shape[0] + 1, forcing.shape[1]))
    out[0] = y0
    for n in range(forcing.shape[0]):
        out[n + 1] = E @ out[n] + forcing[n]
    return out


def ou_fast_stationary(op: SpectralOperator, eps: float, sigma1: float, path: WienerPath) -> OUPath:
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if sigma1 < 0:
        raise ParameterError(f"sigma1 must be nonnegative, got {sigma1}")
    if path.dims != op.n_modes:
        raise ParameterError(f"fast Wiener path has {path.dims} components, operator has {op.n_modes} modes")

    prop = fast_propagators(op, eps, sigma1, path.dt)
    rng = np.random.default_rng([path.seed, path.stream, _STATIONARY])
    init = rng.standard_normal(op.n_modes) * sigma1 / np.sqrt(2.0 * op.eigenvalues)
    values = diagonal_recursion(prop.decay, fast_forcing(prop, path.increments, path.dt), init)
    return OUPath(
        i0=path.i0,
        dt=path.dt,
        values=values,
        rates=op.eigenvalues / eps,
        noise_scale=sigma1 / math.sqrt(eps),
        seed=path.seed,
        stream=path.stream,
    )


def ou_slow_stationary(J: ArrayLike, sigma2: float, path: WienerPath) -> OUPath:
    mat = _as_matrix(J)
    if sigma2 < 0:
        raise ParameterError(f"sigma2 must be nonnegative, got {sigma2}")
    if not is_hurwitz(mat):
        raise HypothesisError(f"J is not stable, eigenvalues {np.linalg.eigvals(mat)}")
    if path.dims != mat.shape[0]:
        raise ParameterError(f"slow Wiener path has {path.dims} components, J is {mat.shape[0]}x{mat.shape[0]}")

    prop = slow_propagators(mat, sigma2, path.dt)
    rng = np.random.default_rng([path.seed, path.stream, _STATIONARY])
    init = cholesky(prop.stationary_cov, lower=True) @ rng.standard_normal(mat.shape[0]) if sigma2 > 0 else np.zeros(mat.shape[0])
    forcing = (path.increments / math.sqrt(path.dt)) @ prop.chol.T
    return OUPath(
        i0=path.i0,
        dt=path.dt,
        values=linear_recursion(prop.E, forcing, init),
        rates=-np.linalg.eigvals(mat).real,
        noise_scale=sigma2,
        seed=path.seed,
        stream=path.stream,
    )


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    w_fast: WienerPath
    w_slow: WienerPath
    eta: OUPath
    xi: OUPath
    seed: int

    @property
    def dt(self) -> float:
        return self.eta.dt

    @property
    def t0(self) -> float:
        return self.eta.t0

    @property
    def t1(self) -> float:
        return self.eta.t1

    def shift(self, s: float, window: tuple[float, float] | None = None) -> NoiseRealization:
        return NoiseRealization(
            w_fast=shift_path(self.w_fast, s, window),
            w_slow=shift_path(self.w_slow, s, window),
            eta=shift_path(self.eta, s, window),
            xi=shift_path(self.xi, s, window),
            seed=self.seed,
        )


def realize(
    op: SpectralOperator,
    eps: float,
    sigma1: float,
    J: ArrayLike,
    sigma2: float,
    seed: int,
    t_lo: float,
    t_hi: float,
    dt: float,
) -> NoiseRealization:
    mat = _as_matrix(J)
    w_fast = generate_wiener(t_lo, t_hi, dt, op.n_modes, seed, stream=0)
    w_slow = generate_wiener(t_lo, t_hi, dt, mat.shape[0], seed, stream=1)
    return NoiseRealization(
        w_fast=w_fast,
        w_slow=w_slow,
        eta=ou_fast_stationary(op, eps, sigma1, w_fast),
        xi=ou_slow_stationary(mat, sigma2, w_slow),
        seed=seed,
    )


def path_table(p: WienerPath | OUPath) -> NDArray[np.float64]:
    values = p.cumulative() if isinstance(p, WienerPath) else p.values
    n, dims = values.shape
    times = np.repeat(p.times, dims)
    modes = np.tile(np.arange(1, dims + 1), n)
    return np.column_stack([times, modes, values.reshape(-1)])
