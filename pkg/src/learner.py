"""
Online Kernel Learner

Unregularized and regularized online gradient descent in an RKHS,
with step-size schedules and online averaging.

Two equivalent representations of an iterate:
  - primal: coefficients a_k in the eigenbasis (spectral kernels only)
  - dual:   sum_j g_j K(x_j, .) with a lazy global shrinkage scale
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ContractionViolationError,
    InputError,
    InvalidParameterError,
    NumericalDivergenceError,
    StepIndexError,
    UnsupportedRegularityError,
)
from .model import DataModel, KernelModel, eigenfunctions, kappa_sq, sample_stream

logger = logging.getLogger(__name__)

# Renormalize the dual expansion before the lazy scale underflows.
SCALE_FLOOR = 1e-300

ALGORITHMS = ("last", "averaged", "regularized")


# ── Schedules ────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes eta_t (and lambda_t for the regularized recursion)."""

    variant: str  # "poly" | "constant" | "regularized"
    eta1: float
    theta: float = 0.5
    horizon: Optional[int] = None
    r: Optional[float] = None
    lambda_factor: float = 1.0

    @classmethod
    def poly_decay(cls, eta1: float, theta: float, kappa_sq: Optional[float] = None) -> "StepSchedule":
        """eta_t = eta1 * t^(-theta), 1/2 <= theta < 1."""
        if not eta1 > 0:
            raise InvalidParameterError(f"eta1 must be positive (got {eta1})")
        if not 0.5 <= theta < 1:
            raise InvalidParameterError(f"theta must lie in [1/2, 1) (got {theta})")
        _check_contraction(eta1, kappa_sq)
        return cls(variant="poly", eta1=float(eta1), theta=float(theta))

    @classmethod
    def constant_horizon(cls, eta1: float, horizon: int, r: float,
                         kappa_sq: Optional[float] = None) -> "StepSchedule":
        """eta_t = eta1 * T^(-2r/(2r+1)) for t <= T."""
        if not eta1 > 0:
            raise InvalidParameterError(f"eta1 must be positive (got {eta1})")
        if horizon is None or int(horizon) < 1:
            raise InvalidParameterError(f"Horizon must be >= 1 (got {horizon})")
        if not r > 0.5:
            raise UnsupportedRegularityError(f"Source exponent r must exceed 1/2 (got {r})")
        _check_contraction(eta1, kappa_sq)
        return cls(variant="constant", eta1=float(eta1), theta=2 * r / (2 * r + 1),
                   horizon=int(horizon), r=float(r))

    @classmethod
    def regularized(cls, a: float, r: float, lambda_factor: float = 1.0) -> "StepSchedule":
        """eta_t = a t^(-2r/(2r+1)),  lambda_t = lambda_factor * (1/a) t^(-1/(2r+1))."""
        if not a > 1:
            raise InvalidParameterError(f"Regularized schedules need a > 1 (got {a})")
        if not r > 0.5:
            raise UnsupportedRegularityError(f"Source exponent r must exceed 1/2 (got {r})")
        if lambda_factor < 0:
            raise InvalidParameterError(f"lambda_factor must be >= 0 (got {lambda_factor})")
        return cls(variant="regularized", eta1=float(a), theta=2 * r / (2 * r + 1),
                   r=float(r), lambda_factor=float(lambda_factor))

    def etas(self, T: int) -> np.ndarray:
        """eta_1..eta_T as an array."""
        return np.array([eta(self, t) for t in range(1, int(T) + 1)], dtype=float)


def _check_contraction(eta1: float, kappa_sq_value: Optional[float]) -> None:
    if kappa_sq_value is not None and not eta1 * kappa_sq_value < 1:
        raise InvalidParameterError(
            f"Step sizes need eta1 * kappa^2 < 1 (got {eta1} * {kappa_sq_value:.6g})"
        )


def eta(schedule: StepSchedule, t: int) -> float:
    if t < 1:
        raise StepIndexError(f"Step index must be >= 1 (got {t})")
    if schedule.variant == "constant":
        if t > schedule.horizon:
            raise StepIndexError(f"Step {t} is past the horizon T={schedule.horizon}")
        return schedule.eta1 * schedule.horizon ** (-schedule.theta)
    return schedule.eta1 * t ** (-schedule.theta)


def lam(schedule: StepSchedule, t: int) -> float:
    """Regularization parameter lambda_t (zero for unregularized schedules)."""
    if t < 1:
        raise StepIndexError(f"Step index must be >= 1 (got {t})")
    if schedule.variant != "regularized" or schedule.lambda_factor == 0:
        return 0.0
    return schedule.lambda_factor * (1.0 / schedule.eta1) * t ** (-1.0 / (2 * schedule.r + 1))


# ── State ────────────────────────────────────────────────────────────────────


@dataclass
class LearnerState:
    """
    One learner's iterate, updated in place by the step functions.

    step_index is the label of the current iterate: f_1 = 0 for the
    unregularized recursion, f_0 = 0 for the regularized one.
    """

    kernel: KernelModel
    representation: str  # "primal" | "dual"
    step_index: int
    coefficients: Optional[np.ndarray] = None  # primal
    atom_points: Optional[np.ndarray] = None   # dual, (capacity, dim)
    atom_weights: Optional[np.ndarray] = None  # dual, (capacity,)
    atom_features: Optional[np.ndarray] = None  # dual on spectral kernels, phi(x_j) per atom
    atom_count: int = 0
    global_scale: float = 1.0
    average: Optional[np.ndarray] = None       # running mean, same layout as the iterate
    average_count: int = 0

    @property
    def samples_seen(self) -> int:
        return self._samples

    _samples: int = field(default=0, repr=False)

    def copy(self) -> "LearnerState":
        clone = LearnerState(
            kernel=self.kernel,
            representation=self.representation,
            step_index=self.step_index,
            atom_count=self.atom_count,
            global_scale=self.global_scale,
            average_count=self.average_count,
            _samples=self._samples,
        )
        if self.coefficients is not None:
            clone.coefficients = self.coefficients.copy()
        if self.atom_points is not None:
            clone.atom_points = self.atom_points[: self.atom_count].copy()
            clone.atom_weights = self.atom_weights[: self.atom_count].copy()
        if self.atom_features is not None:
            clone.atom_features = self.atom_features[: self.atom_count].copy()
        if self.average is not None:
            clone.average = self.average.copy()
        return clone

    def effective_weights(self) -> np.ndarray:
        """Dual weights with the lazy scale folded in."""
        return self.global_scale * self.atom_weights[: self.atom_count]


def new_state(kernel: KernelModel, representation: str = "primal", algorithm: str = "last") -> LearnerState:
    """The zero iterate (f_1 for last/averaged, f_0 for regularized)."""
    if representation not in ("primal", "dual"):
        raise InvalidParameterError(f"Unknown representation: {representation!r}")
    if algorithm not in ALGORITHMS:
        raise InvalidParameterError(f"Unknown algorithm: {algorithm!r}")
    if representation == "primal" and not kernel.is_spectral:
        raise InvalidParameterError("Closed-form kernels only support the dual representation")

    start = 0 if algorithm == "regularized" else 1
    state = LearnerState(kernel=kernel, representation=representation, step_index=start)
    if representation == "primal":
        state.coefficients = np.zeros(kernel.spectrum.truncation_rank)
    else:
        state.atom_points = np.zeros((16, kernel.dim))
        state.atom_weights = np.zeros(16)
        if kernel.is_spectral:
            state.atom_features = np.zeros((16, kernel.spectrum.truncation_rank))
    if algorithm == "averaged":
        state.average = np.zeros(state.coefficients.size) if representation == "primal" else np.zeros(0)
        state.average_count = 1
    return state


def _append_atom(state: LearnerState, point: np.ndarray, weight: float) -> None:
    if state.atom_count == state.atom_weights.size:
        grow = max(16, state.atom_count)
        state.atom_points = np.vstack([state.atom_points, np.zeros((grow, state.kernel.dim))])
        state.atom_weights = np.concatenate([state.atom_weights, np.zeros(grow)])
        if state.atom_features is not None:
            state.atom_features = np.vstack([state.atom_features, np.zeros((grow, state.atom_features.shape[1]))])
    state.atom_points[state.atom_count] = point
    state.atom_weights[state.atom_count] = weight
    if state.atom_features is not None:
        state.atom_features[state.atom_count] = eigenfunctions(float(point[0]), state.atom_features.shape[1])
    state.atom_count += 1


def predict(state: LearnerState, x, use_average: bool = False):
    """Evaluate the iterate (or its running mean) at x."""
    scalar = np.ndim(x) == 0 or (state.kernel.dim > 1 and np.ndim(x) == 1)
    if state.representation == "primal":
        coef = state.average if use_average else state.coefficients
        if coef is None:
            raise InputError("No running average is being kept for this learner")
        values = eigenfunctions(np.asarray(x, dtype=float), coef.size) @ coef
    else:
        if use_average:
            if state.average is None:
                raise InputError("No running average is being kept for this learner")
            weights = state.average
        else:
            weights = state.effective_weights()
        points = state.kernel.points(x)
        if weights.size == 0:
            values = np.zeros(points.shape[0])
        elif state.atom_features is not None:
            sigma = state.kernel.spectrum.eigenvalues
            values = eigenfunctions(points[:, 0], sigma.size) @ (sigma * (weights @ state.atom_features[: weights.size]))
        else:
            atoms = state.atom_points[: weights.size]
            values = state.kernel.gram(points, atoms) @ weights
    if scalar:
        return float(np.asarray(values).reshape(-1)[0])
    return np.asarray(values)


# ── Steps ────────────────────────────────────────────────────────────────────


def _residual(state: LearnerState, sample, step: int) -> float:
    x, y = sample
    residual = predict(state, x) - y
    if not math.isfinite(residual):
        raise NumericalDivergenceError("Non-finite prediction", step=step)
    return residual


def sgd_step(state: LearnerState, schedule: StepSchedule, sample) -> LearnerState:
    """f_{t+1} = f_t - eta_t (f_t(x_t) - y_t) K_{x_t}."""
    t = state.step_index
    step_size = eta(schedule, t)
    residual = _residual(state, sample, t)
    x = sample[0]

    if state.representation == "primal":
        sigma = state.kernel.spectrum.eigenvalues
        phi = eigenfunctions(float(x), sigma.size)
        state.coefficients = state.coefficients - (step_size * residual) * (sigma * phi)
        if not np.all(np.isfinite(state.coefficients)):
            raise NumericalDivergenceError("Non-finite coefficients", step=t)
    else:
        _append_atom(state, state.kernel.points(x)[0], -(step_size * residual) / state.global_scale)

    state.step_index = t + 1
    state._samples += 1
    return state


def _is_zero(state: LearnerState) -> bool:
    if state.representation == "primal":
        return not np.any(state.coefficients)
    return not np.any(state.atom_weights[: state.atom_count])


def regularized_step(state: LearnerState, schedule: StepSchedule, sample) -> LearnerState:
    """f_t = (1 - eta_t lambda_t) f_{t-1} - eta_t (f_{t-1}(x_t) - y_t) K_{x_t}."""
    t = state.step_index + 1
    step_size = eta(schedule, t)
    shrink = 1.0 - step_size * lam(schedule, t)
    if _is_zero(state):
        # shrinking f = 0 is a no-op, even when eta_1 lambda_1 = 1
        shrink = 1.0
    if not shrink > 0:
        raise ContractionViolationError(f"1 - eta_t lambda_t = {shrink:.6g} at step {t}")
    residual = _residual(state, sample, t)
    x = sample[0]

    if state.representation == "primal":
        sigma = state.kernel.spectrum.eigenvalues
        phi = eigenfunctions(float(x), sigma.size)
        state.coefficients = shrink * state.coefficients - (step_size * residual) * (sigma * phi)
        if not np.all(np.isfinite(state.coefficients)):
            raise NumericalDivergenceError("Non-finite coefficients", step=t)
    else:
        state.global_scale *= shrink
        _append_atom(state, state.kernel.points(x)[0], -(step_size * residual) / state.global_scale)
        if state.global_scale < SCALE_FLOOR:
            state.atom_weights[: state.atom_count] *= state.global_scale
            state.global_scale = 1.0

    state.step_index = t
    state._samples += 1
    return state


def average_update(state: LearnerState) -> LearnerState:
    """Fold the current iterate into the running mean: abar <- abar + (a - abar)/i."""
    if state.average is None:
        raise InputError("No running average is being kept for this learner")
    state.average_count += 1
    i = state.average_count
    if state.representation == "primal":
        state.average = state.average + (state.coefficients - state.average) / i
    else:
        current = state.effective_weights()
        padded = np.zeros(current.size)
        padded[: state.average.size] = state.average
        state.average = padded + (current - padded) / i
    return state


def to_primal(state: LearnerState, use_average: bool = False) -> np.ndarray:
    """Eigen-coefficients a_k = sigma_k sum_j g_j phi_k(x_j) of a dual (or primal) iterate."""
    if state.representation == "primal":
        coef = state.average if use_average else state.coefficients
        if coef is None:
            raise InputError("No running average is being kept for this learner")
        return coef.copy()
    if not state.kernel.is_spectral:
        raise InvalidParameterError("Closed-form kernels have no eigen-coefficients")
    sigma = state.kernel.spectrum.eigenvalues
    weights = state.average if use_average else state.effective_weights()
    if weights is None:
        raise InputError("No running average is being kept for this learner")
    if weights.size == 0:
        return np.zeros(sigma.size)
    return sigma * (weights @ state.atom_features[: weights.size])


def k_norm_sq(state: LearnerState, use_average: bool = False) -> float:
    """||f||_K^2 of the iterate."""
    if state.representation == "dual" and not state.kernel.is_spectral:
        weights = state.average if use_average else state.effective_weights()
        if weights.size == 0:
            return 0.0
        atoms = state.atom_points[: weights.size]
        return float(weights @ state.kernel.gram(atoms, atoms) @ weights)
    a = to_primal(state, use_average)
    return math.fsum(a * a / state.kernel.spectrum.eigenvalues)


# ── Runs ─────────────────────────────────────────────────────────────────────


@dataclass
class Snapshot:
    """Learner state captured at a checkpoint."""

    index: int  # iterate-index checkpoint in [1, T+1]
    t: int      # samples consumed = index - 1
    state: LearnerState


@dataclass
class Trajectory:
    """Snapshots of one seed's run plus the per-step iterate norms."""

    seed: int
    algorithm: str
    snapshots: list[Snapshot]
    k_norms: Optional[np.ndarray] = None  # ||f||_K^2 after 0..T samples


def run_stream(
    data_model: DataModel,
    kernel: KernelModel,
    schedule: StepSchedule,
    algorithm: str,
    T: int,
    checkpoints: Sequence[int],
    seed: int,
    representation: str = "primal",
    track_norms: bool = False,
) -> Trajectory:
    """
    Consume T samples and snapshot at iterate-index checkpoints.

    A checkpoint c in [1, T+1] is taken after c - 1 samples, so it holds
    f_c for last/averaged runs and f_{c-1} for regularized runs.
    """
    if algorithm not in ALGORITHMS:
        raise InvalidParameterError(f"Unknown algorithm: {algorithm!r}")
    if (algorithm == "regularized") != (schedule.variant == "regularized"):
        raise InvalidParameterError(f"Schedule {schedule.variant!r} does not drive algorithm {algorithm!r}")
    if schedule.variant != "regularized":
        _check_contraction(schedule.eta1, kappa_sq(kernel))
    T = int(T)
    wanted = [int(c) for c in checkpoints]
    if any(b <= a for a, b in zip(wanted, wanted[1:])):
        raise InputError("Checkpoints must be strictly increasing")
    if wanted and (wanted[0] < 1 or wanted[-1] > T + 1):
        raise InputError(f"Checkpoints must lie in [1, {T + 1}]")
    if track_norms and representation != "primal":
        raise InputError("Per-step norm tracking needs the primal representation")

    xs, ys = sample_stream(data_model, T, seed)
    state = new_state(kernel, representation, algorithm)
    step = regularized_step if algorithm == "regularized" else sgd_step
    inv_sigma = 1.0 / kernel.spectrum.eigenvalues if track_norms else None

    norms = np.zeros(T + 1) if track_norms else None
    snapshots: list[Snapshot] = []
    pending = iter(wanted)
    next_index = next(pending, None)

    try:
        for consumed in range(T + 1):
            if track_norms:
                norms[consumed] = math.fsum(state.coefficients ** 2 * inv_sigma)
            if next_index == consumed + 1:
                snapshots.append(Snapshot(index=next_index, t=consumed, state=state.copy()))
                next_index = next(pending, None)
            if consumed == T:
                break
            step(state, schedule, (xs[consumed], ys[consumed]))
            if algorithm == "averaged":
                average_update(state)
    except NumericalDivergenceError as e:
        raise NumericalDivergenceError("Run diverged", step=e.step, seed=seed) from e

    logger.debug(f"seed {seed}: {algorithm} run of {T} steps, {len(snapshots)} snapshots")
    return Trajectory(seed=seed, algorithm=algorithm, snapshots=snapshots, k_norms=norms)
