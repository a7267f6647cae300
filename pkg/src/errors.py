"""
Error Types

Every failure the lab raises derives from OKLError, itself a ValueError,
so callers that only care about "bad input" can keep catching ValueError.
"""

from typing import Optional


class OKLError(ValueError):
    """Base class for all kernel-lab errors."""


class InvalidParameterError(OKLError):
    """A numeric parameter is outside its admissible range."""


class UnsupportedRegularityError(OKLError):
    """Source-condition exponent r <= 1/2."""


class DomainError(OKLError):
    """An input point lies outside the kernel's domain."""


class NumericalDivergenceError(OKLError):
    """A prediction or weight became non-finite during a run."""

    def __init__(self, message: str, step: int, seed: Optional[int] = None):
        self.step = step
        self.seed = seed
        where = f"step {step}" if seed is None else f"seed {seed}, step {step}"
        super().__init__(f"{message} ({where})")


class ContractionViolationError(OKLError):
    """Regularized shrinkage factor 1 - eta_t * lambda_t is not positive."""


class UndefinedNormError(OKLError):
    """The RKHS norm needs an eigenvalue that is zero."""


class CapacityTrivialError(OKLError):
    """beta = 1 was passed to a capacity-dependent constant."""


class BranchMismatchError(OKLError):
    """The schedule exponent does not match the rate branch selected for (r, beta)."""


class PrecisionError(OKLError):
    """Quadrature failed to converge to the requested tolerance."""


class StepIndexError(OKLError):
    """A step or product index is outside its admissible range."""


class InputError(OKLError):
    """Inputs have inconsistent shapes or lengths."""


class FitError(OKLError):
    """A log-log rate fit cannot be computed."""


class ConfigError(OKLError):
    """An experiment file or environment setting is malformed."""
