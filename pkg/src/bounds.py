"""
Convergence Bounds

Closed-form constants and rate envelopes for online kernel SGD:
step-size sums, iterate-norm bounds, bias and variance bounds in the
L2(rho) and RKHS norms, the rate selector and the combined bias plus variance bounds.

All functions are pure and evaluate the constants in closed form, without
tightening.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    BranchMismatchError,
    CapacityTrivialError,
    InvalidParameterError,
    UnsupportedRegularityError,
)
from .model import DataModel, KernelModel, Spectrum, capacity_trace, kappa_sq

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

# theta values within this distance are treated as the same schedule exponent
THETA_TOL = 1e-9

# Below this the 1/beta term of the RKHS variance constant blows up.
MIN_K_BETA = 1e-3


@dataclass(frozen=True)
class ProblemProfile:
    """Every scalar the bounds depend on."""

    r: float
    beta: float
    eta1: float
    theta: float
    kappa_sq: float
    M: float
    rho_norm_f: float   # ||f_rho||_rho^2
    k_norm_f: float     # ||f_rho||_K^2
    rho_norm_u: float   # ||u_rho||_rho^2
    noise_risk: float   # E(f_rho)
    trace_beta: float   # Tr(L_K^beta)

    def __post_init__(self):
        if not self.r > 0.5:
            raise UnsupportedRegularityError(f"Source exponent r must exceed 1/2 (got {self.r})")
        if not 0 <= self.beta <= 1:
            raise InvalidParameterError(f"Capacity index beta must lie in [0, 1] (got {self.beta})")
        if not 0.5 <= self.theta < 1:
            raise InvalidParameterError(f"theta must lie in [1/2, 1) (got {self.theta})")
        if not self.eta1 > 0 or not self.eta1 * self.kappa_sq < 1:
            raise InvalidParameterError(
                f"Need eta1 > 0 and eta1 * kappa^2 < 1 (got {self.eta1} * {self.kappa_sq:.6g})"
            )
        for name in ("kappa_sq", "M", "rho_norm_f", "k_norm_f", "rho_norm_u", "noise_risk", "trace_beta"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")

    @classmethod
    def from_model(cls, kernel: KernelModel, data_model: DataModel, eta1: float, theta: float,
                   beta: float) -> "ProblemProfile":
        """Collect the scalars of a spectral problem."""
        spectrum: Spectrum = kernel.spectrum
        target = data_model.target
        return cls(
            r=target.regularity_r,
            beta=float(beta),
            eta1=float(eta1),
            theta=float(theta),
            kappa_sq=kappa_sq(kernel),
            M=data_model.output_bound_M,
            rho_norm_f=target.rho_norm_sq,
            k_norm_f=target.k_norm_sq,
            rho_norm_u=target.u_norm_sq,
            noise_risk=data_model.noise_risk,
            trace_beta=capacity_trace(spectrum, beta),
        )

    @property
    def generalization(self) -> float:
        return generalization_bound(self)


# ── Step-size sums ───────────────────────────────────────────────────────────


@dataclass
class StepSums:
    """Exact sums of eta_i = eta1 i^(-theta) and their closed-form envelopes."""

    t: int
    eta1: float
    theta: float
    total: float        # sum_{i<=t} eta_i
    lower: float
    upper: float
    total_sq: float     # sum_{i<=t} eta_i^2
    sq_bound: float
    envelopes_tested: bool  # False for t < 3, outside the envelope hypothesis

    def tail(self, i: int) -> float:
        """Exact sum_{j=i+1}^t eta_j."""
        if not 1 <= i <= self.t:
            raise InvalidParameterError(f"Tail index must lie in [1, {self.t}] (got {i})")
        j = np.arange(i + 1, self.t + 1, dtype=float)
        return math.fsum(self.eta1 * j ** (-self.theta))

    def tail_bound(self, i: int) -> float:
        """Lower bound eta1/(1-theta) ((t+1)^(1-theta) - (i+1)^(1-theta))."""
        return tail_lower_bound(self.eta1, self.theta, i, self.t)

    def tails(self) -> np.ndarray:
        """Exact tails for i = 1..t."""
        i = np.arange(1, self.t + 1, dtype=float)
        etas = self.eta1 * i ** (-self.theta)
        # suffix sums, shifted so entry i-1 holds sum_{j>i}
        suffix = np.cumsum(etas[::-1])[::-1]
        return np.append(suffix[1:], 0.0)

    def tail_bounds(self) -> np.ndarray:
        e = 1.0 - self.theta
        # (j+1)^e for j = 0..t; the i = t entry is exactly 0
        powered = np.arange(1, self.t + 2, dtype=float) ** e
        return self.eta1 / e * (powered[-1] - powered[1:])


def tail_lower_bound(eta1: float, theta: float, i: int, t: int) -> float:
    e = 1.0 - theta
    return eta1 / e * ((t + 1.0) ** e - (i + 1.0) ** e)


def stepsum_bounds(eta1: float, theta: float, t: int) -> StepSums:
    """Sums of polynomially decaying step sizes with their envelopes."""
    if not 0.5 <= theta < 1:
        raise InvalidParameterError(f"theta must lie in [1/2, 1) (got {theta})")
    if not eta1 > 0:
        raise InvalidParameterError(f"eta1 must be positive (got {eta1})")
    t = int(t)
    if t < 1:
        raise InvalidParameterError(f"t must be >= 1 (got {t})")

    etas = eta1 * np.arange(1, t + 1, dtype=float) ** (-theta)
    e = 1.0 - theta
    if theta > 0.5:
        sq_bound = 2.0 * eta1 ** 2 * theta / (2.0 * theta - 1.0)
    else:
        sq_bound = 2.0 * eta1 ** 2 * math.log(t)

    if t < 3:
        logger.debug(f"t={t} is below 3; envelopes are reported but not tested")
    return StepSums(
        t=t,
        eta1=eta1,
        theta=theta,
        total=math.fsum(etas),
        lower=eta1 * (1.0 - 2.0 ** (theta - 1.0)) * t ** e / e,
        upper=eta1 * t ** e / e,
        total_sq=math.fsum(etas * etas),
        sq_bound=sq_bound,
        envelopes_tested=t >= 3,
    )


# ── Iterates and risk ────────────────────────────────────────────────────────


def generalization_bound(profile: ProblemProfile) -> float:
    """Uniform bound on the expected risk of every iterate: 20 ||f_rho||_rho^2 + 3 E(f_rho)."""
    return 20.0 * profile.rho_norm_f + 3.0 * profile.noise_risk


def iterate_norm_bound(profile: ProblemProfile, t: float) -> float:
    """Bound on E ||f_t||_K^2; the theta = 1/2 branch grows like ln t."""
    G = generalization_bound(profile)
    eta1, theta, k2 = profile.eta1, profile.theta, profile.kappa_sq
    if theta > 0.5:
        return 4.0 * profile.k_norm_f + 4.0 * theta * eta1 ** 2 * k2 / (2.0 * theta - 1.0) * G
    if t <= 1:
        raise InvalidParameterError(f"The theta = 1/2 iterate bound needs t > 1 (got {t})")
    return (4.0 * profile.k_norm_f + 4.0 * eta1 ** 2 * k2 * G) * math.log(t)


# ── Bias ─────────────────────────────────────────────────────────────────────


def bias_constant_rho(profile: ProblemProfile) -> float:
    r, theta, eta1 = profile.r, profile.theta, profile.eta1
    base = r * (1.0 - theta) / (math.e * eta1 * (1.0 - 2.0 ** (theta - 1.0)))
    return profile.rho_norm_u * base ** (2.0 * r)


def bias_bound_rho(profile: ProblemProfile, t: float) -> float:
    """Bias bound in L2(rho), decaying like t^(-2r(1-theta))."""
    return bias_constant_rho(profile) * t ** (-2.0 * profile.r * (1.0 - profile.theta))


def _require_half(profile: ProblemProfile, what: str) -> None:
    if abs(profile.theta - 0.5) > THETA_TOL:
        raise InvalidParameterError(f"{what} needs theta = 1/2 (got {profile.theta})")


def bias_constant_K(profile: ProblemProfile) -> float:
    r = profile.r
    base = r / (math.e * profile.eta1 * (2.0 - SQRT2))
    return profile.rho_norm_u * base ** (2.0 * r - 1.0)


def bias_bound_K(profile: ProblemProfile, t: float) -> float:
    """Bias bound in the RKHS norm for theta = 1/2, decaying like t^(-(2r-1)/2)."""
    _require_half(profile, "The RKHS bias bound")
    return bias_constant_K(profile) * t ** (-(2.0 * profile.r - 1.0) / 2.0)


# ── Variance ─────────────────────────────────────────────────────────────────


@dataclass
class VarianceBound:
    """A variance bound with the constants that produced it."""

    iterate_constant: float   # C_theta or C_kappa
    variance_constant: float  # C_{beta,theta} or its RKHS counterpart
    value: float


def iterate_constant(profile: ProblemProfile) -> float:
    """C_theta = 8 kappa^2 ||f_rho||_K^2 + 8 theta eta1^2 kappa^2/(2theta-1) G + 2 M^2."""
    k2, eta1, theta = profile.kappa_sq, profile.eta1, profile.theta
    return (8.0 * k2 * profile.k_norm_f
            + 8.0 * theta * eta1 ** 2 * k2 / (2.0 * theta - 1.0) * generalization_bound(profile)
            + 2.0 * profile.M ** 2)


def variance_constant(profile: ProblemProfile) -> float:
    theta, beta, eta1, k2 = profile.theta, profile.beta, profile.eta1, profile.kappa_sq
    if not 0.5 < theta < 1:
        raise InvalidParameterError(f"The L2 variance bound needs 1/2 < theta < 1 (got {theta})")
    if beta >= 1:
        raise CapacityTrivialError(
            "beta = 1 makes the variance constant divide by zero; use the capacity-independent comparison"
        )
    c_theta = iterate_constant(profile)
    e = 2.0 - beta
    shape = ((e / (2.0 * math.e)) ** e + k2 ** e)
    sums = ((1.0 - theta) / (1.0 - 2.0 ** (theta - 1.0))) ** e * (2.0 * eta1 ** 2 * theta / (2.0 * theta - 1.0))
    tail = 3.0 * eta1 * 4.0 ** theta * e / (1.0 - beta)
    return c_theta * (eta1 ** 2 * k2 ** 2 + 2.0 * profile.trace_beta * shape * (sums + tail))


def variance_exponent_rho(profile: ProblemProfile) -> float:
    return min((2.0 - profile.beta) * (1.0 - profile.theta), profile.theta)


def variance_bound_rho(profile: ProblemProfile, t: float) -> VarianceBound:
    """Variance bound in L2(rho): C_{beta,theta} t^(-min{(2-beta)(1-theta), theta})."""
    c = variance_constant(profile)
    return VarianceBound(
        iterate_constant=iterate_constant(profile),
        variance_constant=c,
        value=c * t ** (-variance_exponent_rho(profile)),
    )


def log_iterate_constant(profile: ProblemProfile) -> float:
    """C_kappa = 8 kappa^2 ||f_rho||_K^2 + 8 eta1^2 kappa^4 G + 2 M^2."""
    k2 = profile.kappa_sq
    return (8.0 * k2 * profile.k_norm_f
            + 8.0 * profile.eta1 ** 2 * k2 ** 2 * generalization_bound(profile)
            + 2.0 * profile.M ** 2)


def k_variance_constant(profile: ProblemProfile) -> float:
    _require_half(profile, "The RKHS variance bound")
    beta, eta1 = profile.beta, profile.eta1
    if beta >= 1:
        raise CapacityTrivialError("beta = 1 leaves no capacity gain in the RKHS variance bound")
    if beta < MIN_K_BETA:
        raise InvalidParameterError(
            f"beta={beta} is too small: the RKHS variance constant grows like 1/beta as beta -> 0"
        )
    c_kappa = log_iterate_constant(profile)
    e = 1.0 - beta
    bracket = (1.0 / (2.0 - SQRT2)) ** e * 2.0 * eta1 ** (1.0 + beta) + 6.0 * eta1 ** (1.0 + beta) / beta
    return (eta1 ** 2 * profile.kappa_sq * c_kappa
            + 2.0 * c_kappa * profile.trace_beta * (e / (2.0 * math.e)) ** e * bracket)


def variance_bound_K(profile: ProblemProfile, t: float) -> VarianceBound:
    """Variance bound in the RKHS norm: C t^(-(1-beta)/2) (ln t)^2."""
    c = k_variance_constant(profile)
    return VarianceBound(
        iterate_constant=log_iterate_constant(profile),
        variance_constant=c,
        value=c * t ** (-(1.0 - profile.beta) / 2.0) * math.log(t) ** 2,
    )


# ── Rates ────────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class RateChoice:
    theta_star: float
    rho_exponent: float
    k_exponent: float


def rate_selector(r: float, beta: float) -> RateChoice:
    """Schedule exponent that balances bias and variance, with the resulting rates."""
    if not r > 0.5:
        raise UnsupportedRegularityError(f"Source exponent r must exceed 1/2 (got {r})")
    if not 0 < beta < 1:
        raise InvalidParameterError(f"Rate selection needs 0 < beta < 1 (got {beta})")
    if 2.0 * r + beta <= 2.0:
        theta_star = 2.0 * r / (2.0 * r + 1.0)
    else:
        theta_star = (2.0 - beta) / (3.0 - beta)
    return RateChoice(
        theta_star=theta_star,
        rho_exponent=theta_star,
        k_exponent=min(2.0 * r - 1.0, 1.0 - beta) / 2.0,
    )


def rho_exponent(profile: ProblemProfile) -> float:
    """Overall L2 rate exponent min{2r(1-theta), (2-beta)(1-theta), theta} for the profile's schedule."""
    theta = profile.theta
    return min(2.0 * profile.r * (1.0 - theta), (2.0 - profile.beta) * (1.0 - theta), theta)


def rate_constant(profile: ProblemProfile) -> float:
    """Constant of the combined L2 bound: bias constant plus C_{beta,theta}."""
    return bias_constant_rho(profile) + variance_constant(profile)


def k_rate_constant(profile: ProblemProfile) -> float:
    """Constant of the combined RKHS bound."""
    _require_half(profile, "The RKHS rate")
    return bias_constant_K(profile) + k_variance_constant(profile)


def check_branch(profile: ProblemProfile, norm: str) -> Optional[RateChoice]:
    """Raise BranchMismatchError if the profile's theta is not the one the norm's bound is stated for."""
    if norm == "rho":
        choice = rate_selector(profile.r, profile.beta)
        if abs(profile.theta - choice.theta_star) > THETA_TOL:
            raise BranchMismatchError(
                f"theta={profile.theta:.6g} but (r={profile.r}, beta={profile.beta}) selects "
                f"theta*={choice.theta_star:.6g}"
            )
        return choice
    if norm == "K":
        if abs(profile.theta - 0.5) > THETA_TOL:
            raise BranchMismatchError(f"The RKHS bound is stated for theta = 1/2 (got {profile.theta:.6g})")
        return rate_selector(profile.r, profile.beta)
    raise InvalidParameterError(f"Unknown norm: {norm!r}")


def theorem_bound(profile: ProblemProfile, t: float, norm: str = "rho", strict: bool = True) -> float:
    """
    Combined bound on the expected squared error of the last iterate.

    rho: (bias constant + C_{beta,theta}) t^(-min{2r(1-theta), (2-beta)(1-theta), theta})
    K:   (bias constant + RKHS variance constant) t^(-min{2r-1, 1-beta}/2) (ln t)^2

    strict=False evaluates the rho form for any theta in (1/2, 1).
    """
    if norm == "rho":
        if strict:
            check_branch(profile, "rho")
        return rate_constant(profile) * t ** (-rho_exponent(profile))
    if norm == "K":
        choice = check_branch(profile, "K")
        return k_rate_constant(profile) * t ** (-choice.k_exponent) * math.log(t) ** 2
    raise InvalidParameterError(f"Unknown norm: {norm!r}")


def trace_envelope(profile: ProblemProfile, tail_sum: float, power: int) -> float:
    """
    Capacity bound on sum_k sigma_k^p prod(1 - eta_j sigma_k)^2 given the tail sum S = sum eta_j.

    Tr(L^beta) sup_x x^(p-beta) exp(-2 x S) = Tr(L^beta) ((p-beta)/(2e))^(p-beta) / S^(p-beta),
    capped by Tr(L^beta) kappa^(2(p-beta)) when S is small.
    """
    e = power - profile.beta
    cap = profile.trace_beta * profile.kappa_sq ** e
    if tail_sum <= 0:
        return cap
    return min(cap, profile.trace_beta * (e / (2.0 * math.e)) ** e / tail_sum ** e)
