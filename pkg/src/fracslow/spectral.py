# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ParameterError

DEFAULT_MODES = 16
PROFILE_POINTS = 101


def _check_alpha(alpha: float) -> None:
    if not (1.0 < alpha < 2.0):
        raise ParameterError(f"alpha must lie in (1, 2), got {alpha}")


def _closed_form(k: int | NDArray[np.int64], alpha: float) -> NDArray[np.float64]:
    return np.power(np.asarray(k, dtype=float) * math.pi / 2.0 - (2.0 - alpha) * math.pi / 8.0, alpha)


def eigenvalue(k: int, alpha: float) -> float:
    _check_alpha(alpha)
    if int(k) != k or k < 1:
        raise ParameterError(f"mode index must be a positive integer, got {k}")
    return float(_closed_form(int(k), alpha))


def const_coeffs(n_modes: int) -> NDArray[np.float64]:
    # <1, phi_k> = 2 (1 - (-1)^k) / (k pi)
    k = np.arange(1, n_modes + 1)
    return np.where(k % 2 == 1, 4.0 / (k * math.pi), 0.0)


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    alpha: float
    n_modes: int
    eigenvalues: NDArray[np.float64]
    basis_const_coeffs: NDArray[np.float64]

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def semigroup(self, t: float) -> NDArray[np.float64]:
        if t < 0:
            raise ParameterError(f"semigroup is defined for t >= 0, got {t}")
        return np.exp(-self.eigenvalues * t)

    def basis(self, x: ArrayLike) -> NDArray[np.float64]:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        k = np.arange(1, self.n_modes + 1)
        return np.sin(np.outer(xs + 1.0, k) * math.pi / 2.0)

    def reconstruct(self, coeffs: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
        return self.basis(x) @ np.asarray(coeffs, dtype=float)

    def integrate(self, coeffs: ArrayLike) -> float:
        """Integral of sum_k c_k phi_k over (-1, 1), exact in this basis."""
        return float(np.dot(np.asarray(coeffs, dtype=float), self.basis_const_coeffs))

    def project_constant(self, value: float) -> NDArray[np.float64]:
        return value * self.basis_const_coeffs


def build_operator(alpha: float, n_modes: int = DEFAULT_MODES) -> SpectralOperator:
    _check_alpha(alpha)
    if int(n_modes) != n_modes or n_modes < 1:
        raise ParameterError(f"n_modes must be a positive integer, got {n_modes}")
    n_modes = int(n_modes)
    eigenvalues = _closed_form(np.arange(1, n_modes + 1), alpha)
    return SpectralOperator(alpha=alpha, n_modes=n_modes, eigenvalues=eigenvalues, basis_const_coeffs=const_coeffs(n_modes))


def x_grid(n: int = PROFILE_POINTS) -> NDArray[np.float64]:
    return np.linspace(-1.0, 1.0, n)


@dataclass(frozen=True)
class SemigroupCheck:
    passed: bool
    constant: float
    times: NDArray[np.float64]
    norms: NDArray[np.float64]


def semigroup_decay_check(op: SpectralOperator, t_grid: ArrayLike) -> SemigroupCheck:
    times = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if times.size == 0:
        raise ParameterError("t_grid must not be empty")
    if np.any(times < 0):
        raise ParameterError("t_grid must be nonnegative")

    # operator norm of a diagonal matrix is its largest entry
    norms = np.array([np.max(op.semigroup(t)) for t in times])
    constant = float(np.max(norms / np.exp(-op.lambda1 * times)))
    return SemigroupCheck(passed=constant <= 1.0 + 1e-12, constant=constant, times=times, norms=norms)
