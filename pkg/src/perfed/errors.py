"""Exception hierarchy shared across the package."""

from __future__ import annotations

__all__ = [
    "PerfedError",
    "InputError",
    "ConfigError",
    "GenerationError",
    "IngestionError",
    "NumericError",
    "ConvergenceError",
    "NonContractionError",
    "NonContractiveRegimeError",
    "UnsupportedModelError",
]


class PerfedError(Exception):
    """Base class for all package errors."""


class InputError(PerfedError):
    """Invalid argument values or shapes."""


class ConfigError(PerfedError):
    """Invalid or inconsistent run/experiment configuration."""


class GenerationError(PerfedError):
    """Synthetic population or dataset generation failed its targets."""


class IngestionError(PerfedError):
    """Malformed external data file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class NumericError(PerfedError):
    """Non-finite value encountered; carries the failing step index."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"step {step}: {message}")


class ConvergenceError(PerfedError):
    """Iteration cap exceeded; carries the last iterate."""

    def __init__(self, message: str, last_iterate=None, iterations: int | None = None):
        self.last_iterate = last_iterate
        self.iterations = iterations
        super().__init__(message)


class NonContractionError(PerfedError):
    """The fixed-point map is not (provably) a contraction; carries the ratio."""

    def __init__(self, message: str, ratio: float | None = None, last_iterate=None):
        self.ratio = ratio
        self.last_iterate = last_iterate
        super().__init__(message)


class NonContractiveRegimeError(PerfedError):
    """Effective strong-convexity modulus is non-positive for the chosen delta."""

    def __init__(self, message: str, mu_tilde: float | None = None):
        self.mu_tilde = mu_tilde
        super().__init__(message)


class UnsupportedModelError(PerfedError):
    """Operation requires model constants the given model does not declare."""
