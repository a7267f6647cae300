"""
Diagonal Operator Oracle

Exact ground truth for spectral models: the bias term, trace terms and
the full error decomposition computed per eigenvalue, plus numerical checks
of the two operator inequalities the decomposition relies on.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import eigvalsh
from scipy.special import roots_legendre

from .bounds import ProblemProfile, iterate_norm_bound
from .errors import InputError, InvalidParameterError, PrecisionError, StepIndexError
from .learner import StepSchedule
from .model import DataModel, KernelModel, Spectrum, TargetFunction, eigenfunctions, kappa_sq

logger = logging.getLogger(__name__)

Schedule = Union[StepSchedule, Sequence[float], np.ndarray]

# Rows of the (t x n) product matrix processed at once.
CHUNK_ROWS = 4096


def _etas(schedule: Schedule, t: int) -> np.ndarray:
    if isinstance(schedule, StepSchedule):
        return schedule.etas(t)
    etas = np.asarray(schedule, dtype=float).reshape(-1)
    if etas.size < t:
        raise InputError(f"Need {t} step sizes, got {etas.size}")
    return etas[:t]


class DiagonalOperatorState:
    """
    Cached log-products for one (spectrum, schedule, t).

    log_cum[j, k] = sum_{i<=j} log(1 - eta_i sigma_k), so
    P_k(i, t) = prod_{j=i+1}^t (1 - eta_j sigma_k) = exp(log_cum[t] - log_cum[i]).
    """

    def __init__(self, spectrum: Spectrum, schedule: Schedule, t: int):
        if t < 0:
            raise StepIndexError(f"t must be >= 0 (got {t})")
        self.spectrum = spectrum
        self.t = int(t)
        self.etas = _etas(schedule, self.t) if t > 0 else np.zeros(0)
        sigma = spectrum.eigenvalues

        scaled = np.multiply.outer(self.etas, sigma)
        if np.any(scaled >= 1.0):
            raise InvalidParameterError("Every factor 1 - eta_j sigma_k must lie in (0, 1]; check eta1 * kappa^2 < 1")
        self.log_cum = np.vstack([np.zeros(sigma.size), np.cumsum(np.log1p(-scaled), axis=0)])

    def products(self, i: int) -> np.ndarray:
        """P_k(i, t) for every eigenvalue."""
        if not 0 <= i <= self.t:
            raise StepIndexError(f"Product index must lie in [0, {self.t}] (got {i})")
        return np.exp(self.log_cum[self.t] - self.log_cum[i])

    def squared_products(self, start: int, stop: int) -> np.ndarray:
        """P_k(i, t)^2 for i in [start, stop), shape (stop - start, n)."""
        return np.exp(2.0 * (self.log_cum[self.t] - self.log_cum[start:stop]))


def _weights(spectrum: Spectrum, target: TargetFunction, norm: str) -> np.ndarray:
    c2 = target.coefficients ** 2
    if norm == "rho":
        return c2
    if norm == "K":
        return c2 / spectrum.eigenvalues
    raise InvalidParameterError(f"Unknown norm: {norm!r}")


def bias_exact(spectrum: Spectrum, target: TargetFunction, schedule: Schedule, t: int, norm: str = "rho",
               operator: Optional[DiagonalOperatorState] = None) -> float:
    """Squared norm of prod_{i<=t}(I - eta_i L_K) f_rho."""
    operator = operator or DiagonalOperatorState(spectrum, schedule, t)
    weights = _weights(spectrum, target, norm)
    return math.fsum(weights * operator.products(0) ** 2)


def trace_term_exact(spectrum: Spectrum, schedule: Schedule, i: int, t: int, power: int,
                     operator: Optional[DiagonalOperatorState] = None) -> float:
    """sum_k sigma_k^p prod_{j=i+1}^t (1 - eta_j sigma_k)^2."""
    if not 1 <= i <= t:
        raise StepIndexError(f"Need 1 <= i <= t (got i={i}, t={t})")
    if power not in (1, 2):
        raise InvalidParameterError(f"Trace power must be 1 or 2 (got {power})")
    operator = operator or DiagonalOperatorState(spectrum, schedule, t)
    return math.fsum(spectrum.eigenvalues ** power * operator.products(i) ** 2)


def trace_terms(operator: DiagonalOperatorState, power: int) -> np.ndarray:
    """trace_term_exact for every i = 1..t, in chunks."""
    sigma_p = operator.spectrum.eigenvalues ** power
    out = np.empty(operator.t)
    for start in range(1, operator.t + 1, CHUNK_ROWS):
        stop = min(start + CHUNK_ROWS, operator.t + 1)
        out[start - 1: stop - 1] = operator.squared_products(start, stop) @ sigma_p
    return out


def iterate_bound_norms(profile: ProblemProfile, t: int) -> np.ndarray:
    """
    Stand-in values for E ||f_i||_K^2, i = 1..t.

    f_1 = 0 exactly; later iterates use the uniform iterate bound, whose
    logarithmic branch is evaluated no earlier than i - 1 = 3.
    """
    norms = np.zeros(t)
    for i in range(2, t + 1):
        norms[i - 1] = iterate_norm_bound(profile, max(i - 1, 3))
    return norms


def decomposition_rhs(spectrum: Spectrum, data_model: DataModel, schedule: Schedule, t: int, norm: str,
                      iterate_norms: Union[str, Sequence[float]],
                      profile: Optional[ProblemProfile] = None,
                      operator: Optional[DiagonalOperatorState] = None) -> float:
    """
    Bias plus variance side of the error decomposition:

        bias + sum_{i<=t} eta_i^2 2 (kappa^2 N_i + M^2) Tr(L^p prod_{j>i}(I - eta_j L)^2)

    with p = 2 for rho and p = 1 for K. N_i is either the supplied list of
    E ||f_i||_K^2 values or, for iterate_norms="bound", the iterate bound.
    """
    if t < 0:
        raise StepIndexError(f"t must be >= 0 (got {t})")
    power = 2 if norm == "rho" else 1
    operator = operator or DiagonalOperatorState(spectrum, schedule, t)
    bias = bias_exact(spectrum, data_model.target, schedule, t, norm, operator)
    if t == 0:
        return bias

    if isinstance(iterate_norms, str):
        if iterate_norms != "bound":
            raise InvalidParameterError(f"Unknown iterate-norm source: {iterate_norms!r}")
        if profile is None:
            raise InputError("The iterate-bound source needs a ProblemProfile")
        norms = iterate_bound_norms(profile, t)
    else:
        norms = np.asarray(iterate_norms, dtype=float).reshape(-1)
        if norms.size != t:
            raise InputError(f"Expected {t} iterate norms, got {norms.size}")

    k2 = kappa_sq(KernelModel.spectral(spectrum))
    M2 = data_model.output_bound_M ** 2
    terms = operator.etas ** 2 * 2.0 * (k2 * norms + M2) * trace_terms(operator, power)
    return bias + math.fsum(terms)


# ── Operator-inequality checks ───────────────────────────────────────────────


def congruence_gap(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> float:
    """Smallest eigenvalue of C^T A C - C^T B C."""
    D = C.T @ A @ C - C.T @ B @ C
    return float(eigvalsh((D + D.T) / 2.0)[0])


def psd_congruence_check(dim: int, n_trials: int, seed: int) -> bool:
    """
    Random check that A >= B implies C^T A C >= C^T B C.

    B is symmetric, A = B + H H^T, C is a dense Gaussian matrix.
    """
    if dim < 2:
        raise InvalidParameterError(f"dim must be >= 2 (got {dim})")
    generator = np.random.Generator(np.random.PCG64(seed))
    for trial in range(n_trials):
        G = generator.standard_normal((dim, dim))
        B = (G + G.T) / 2.0
        H = generator.standard_normal((dim, dim))
        A = B + H @ H.T
        C = generator.standard_normal((dim, dim))
        scale = max(1.0, float(np.linalg.norm(C.T @ A @ C)), float(np.linalg.norm(C.T @ B @ C)))
        gap = congruence_gap(A, B, C)
        if gap < -1e-10 * scale:
            logger.warning(f"Congruence check failed at trial {trial}: min eigenvalue {gap:.3e}")
            return False
    return True


@dataclass
class DominanceResult:
    """Both sides of the noise-dominance inequality for one probe."""

    lhs: float
    rhs: float
    passed: bool


def _gauss_legendre(func, panels: int, order: int = 16) -> float:
    nodes, weights = roots_legendre(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    x = (mid[:, None] + half[:, None] * nodes[None, :]).reshape(-1)
    w = (half[:, None] * weights[None, :]).reshape(-1)
    return math.fsum(w * func(x))


def integrate(func, rel_tol: float = 1e-6, panels: int = 4, max_panels: int = 4096) -> float:
    """Composite Gauss-Legendre on [0, 1], doubling panels until successive results agree."""
    previous = _gauss_legendre(func, panels)
    while panels < max_panels:
        panels *= 2
        current = _gauss_legendre(func, panels)
        if abs(current - previous) <= rel_tol * max(abs(current), 1e-300):
            return current
        previous = current
    raise PrecisionError(f"Quadrature did not converge within {max_panels} panels")


def noise_dominance(f_coefficients: Sequence[float], data_model: DataModel, spectrum: Spectrum,
                    probe: Sequence[float]) -> DominanceResult:
    """
    Compare E[(f(x) - y)^2 g(x)^2] with 2 (kappa^2 ||f||_K^2 + M^2) ||g||_rho^2.

    f and g are given by eigen-coefficients. The noise is integrated exactly
    (E eps^2 = s^2/3); x by quadrature. ||g||_rho^2 = <L_K g, g>_K, which in
    RKHS-orthonormal coordinates h_k = g_k / sqrt(sigma_k) is sum sigma_k h_k^2.
    """
    a = np.asarray(f_coefficients, dtype=float)
    g = np.asarray(probe, dtype=float)
    sigma = spectrum.eigenvalues
    c = data_model.target.coefficients
    if not a.size == g.size == sigma.size == c.size:
        raise InputError("f, probe, target and spectrum ranks differ")

    noise = data_model.noise_risk
    diff = a - c

    def integrand(x):
        phi = eigenfunctions(x, sigma.size)
        return ((phi @ diff) ** 2 + noise) * (phi @ g) ** 2

    lhs = integrate(integrand) if np.any(g) else 0.0
    k2 = kappa_sq(KernelModel.spectral(spectrum))
    f_k_norm = math.fsum(a * a / sigma)
    rhs = 2.0 * (k2 * f_k_norm + data_model.output_bound_M ** 2) * math.fsum(g * g)
    return DominanceResult(lhs=lhs, rhs=rhs, passed=lhs <= rhs * (1.0 + 1e-8))


def noise_dominance_check(data_model: DataModel, spectrum: Spectrum, pairs) -> bool:
    """True iff every (f_coefficients, probe) pair satisfies the dominance inequality."""
    for index, (f_coefficients, probe) in enumerate(pairs):
        result = noise_dominance(f_coefficients, data_model, spectrum, probe)
        if not result.passed:
            logger.warning(f"Noise dominance failed for pair {index}: {result.lhs:.6g} > {result.rhs:.6g}")
            return False
    return True
