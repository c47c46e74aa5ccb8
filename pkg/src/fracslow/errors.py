# SPDX-License-Identifier: MIT
# Copyright (c) 2025 Jeff Culverhouse
class FracSlowError(Exception):
    """Base for every error raised by fracslow."""


class ParameterError(FracSlowError, ValueError):
    """A precondition on an argument was violated."""


class ConfigError(ParameterError):
    """The run configuration (file, overrides, flags) is invalid."""


class HypothesisError(FracSlowError):
    """The model violates a structural hypothesis (unstable J, gap condition)."""


class OutOfWindowError(FracSlowError, IndexError):
    """A time outside the generated noise window, or off its grid, was requested."""


class ConvergenceError(FracSlowError):
    def __init__(self, message: str, iterations: int = 0, contraction_estimate: float = float("nan")) -> None:
        super().__init__(message)
        self.iterations = iterations
        self.contraction_estimate = contraction_estimate


class NumericalError(FracSlowError, FloatingPointError):
    def __init__(self, message: str, step: int = -1, time: float = float("nan")) -> None:
        super().__init__(message)
        self.step = step
        self.time = time


class EstimationError(FracSlowError):
    def __init__(self, message: str, d: float = float("nan")) -> None:
        super().__init__(message)
        self.d = d


class InvariantError(FracSlowError):
    """An experiment ran to completion but its pass criterion failed."""
