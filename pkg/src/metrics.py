"""
Error Metrics

Squared L2(rho) and RKHS distances between an iterate and the regression
function, computed exactly in eigen-coordinates, plus a Monte Carlo
excess-risk estimate for kernels without a known eigensystem.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InputError, InvalidParameterError, UndefinedNormError
from .learner import LearnerState, predict, to_primal
from .model import DataModel, Spectrum, TargetFunction, target_eval

logger = logging.getLogger(__name__)

Iterate = Union[LearnerState, np.ndarray]


@dataclass
class ErrorRecord:
    """Distances of one seed's iterate at one checkpoint."""

    t: int                            # samples consumed
    rho_sq: float                     # ||f - f_rho||_rho^2
    k_sq: Optional[float]             # ||f - f_rho||_K^2 (None when undefined)
    seed: int
    algorithm: str
    iterate_k_sq: Optional[float] = None  # ||f||_K^2 of the iterate itself


@dataclass
class RiskEstimate:
    """Monte Carlo mean with its standard error."""

    value: float
    se: float


def _coefficients(iterate: Iterate, use_average: bool) -> np.ndarray:
    if isinstance(iterate, LearnerState):
        return to_primal(iterate, use_average)
    return np.asarray(iterate, dtype=float)


def rho_error_sq(iterate: Iterate, target: TargetFunction, use_average: bool = False) -> float:
    """||f - f_rho||_rho^2 = sum_k (a_k - c_k)^2."""
    a = _coefficients(iterate, use_average)
    if a.size != target.rank:
        raise InputError(f"Iterate has {a.size} coefficients, target has {target.rank}")
    diff = a - target.coefficients
    return math.fsum(diff * diff)


def k_error_sq(iterate: Iterate, target: TargetFunction, spectrum: Spectrum,
               use_average: bool = False) -> float:
    """||f - f_rho||_K^2 = sum_k (a_k - c_k)^2 / sigma_k."""
    a = _coefficients(iterate, use_average)
    sigma = spectrum.eigenvalues
    if a.size != sigma.size or target.rank != sigma.size:
        raise InputError("Iterate, target and spectrum ranks differ")
    if np.any(sigma <= 0):
        raise UndefinedNormError("RKHS distance needs every eigenvalue to be positive")
    diff = a - target.coefficients
    return math.fsum(diff * diff / sigma)


def mc_excess_risk(state: LearnerState, data_model: DataModel, n_test: int, seed: int,
                   use_average: bool = False) -> RiskEstimate:
    """
    Estimate E(f) - E(f_rho) = E_x[(f(x) - f_rho(x))^2] from n_test fresh inputs.

    Inputs are drawn from a PCG64 generator independent of the training stream.
    """
    if n_test < 1:
        raise InvalidParameterError(f"n_test must be >= 1 (got {n_test})")
    generator = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    points = generator.random((int(n_test), data_model.dim))
    xs = points[:, 0] if data_model.dim == 1 else points
    fitted = np.atleast_1d(predict(state, xs, use_average))
    truth = np.atleast_1d(target_eval(data_model.target, None, points[:, 0]))
    squared = (fitted - truth) ** 2
    se = float(np.std(squared, ddof=1) / math.sqrt(n_test)) if n_test > 1 else 0.0
    return RiskEstimate(value=float(np.mean(squared)), se=se)
