"""
Spectral Kernel Model

Synthetic Mercer kernels on [0, 1] with a known eigensystem, closed-form
kernels on a box, targets satisfying a source condition, and the data sampler.

Eigenbasis under the uniform input law:
    phi_0(x) = 1,  phi_k(x) = sqrt(2) cos(k pi x)   (k >= 1)
so every operator quantity reduces to arithmetic on the eigenvalue list.
"""

import logging
import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DomainError, InputError, InvalidParameterError, UnsupportedRegularityError

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

_LABEL_RE = re.compile(r"^\s*(power|exponential|custom)\s*(?:\(\s*([^)]*)\s*\))?\s*$")


@dataclass(frozen=True)
class DecayLabel:
    """How an eigenvalue list was generated."""

    kind: str  # "power" | "exponential" | "custom"
    param: Optional[float] = None  # b for power, q for exponential

    @classmethod
    def parse(cls, text: Union[str, "DecayLabel"]) -> "DecayLabel":
        """Parse labels such as 'power(0.25)', 'exponential(0.5)' or 'custom'."""
        if isinstance(text, DecayLabel):
            return text
        match = _LABEL_RE.match(str(text))
        if not match:
            raise InvalidParameterError(f"Unrecognised decay label: {text!r}")
        kind, raw = match.group(1), match.group(2)
        if kind == "custom":
            return cls(kind="custom")
        if raw is None or raw == "":
            raise InvalidParameterError(f"Decay label {kind!r} needs a parameter, e.g. {kind}(0.5)")
        try:
            return cls(kind=kind, param=float(raw))
        except ValueError as e:
            raise InvalidParameterError(f"Bad decay parameter in {text!r}: {e}") from e

    def __str__(self) -> str:
        if self.kind == "custom":
            return "custom"
        return f"{self.kind}({self.param:g})"


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Non-increasing, strictly positive eigenvalues of a finite-rank integral operator."""

    eigenvalues: np.ndarray
    decay_label: DecayLabel

    def __post_init__(self):
        values = np.array(self.eigenvalues, dtype=float).reshape(-1)
        if values.size < 1:
            raise InvalidParameterError("Spectrum needs at least one eigenvalue")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise InvalidParameterError("Eigenvalues must be finite and strictly positive")
        if np.any(np.diff(values) > 0):
            raise InvalidParameterError("Eigenvalues must be non-increasing")
        values.setflags(write=False)
        object.__setattr__(self, "eigenvalues", values)

    @property
    def truncation_rank(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def trace(self) -> float:
        """Tr(L_K) = sum of eigenvalues."""
        return math.fsum(self.eigenvalues)


def build_spectrum(
    decay_label: Union[str, DecayLabel],
    n: int,
    scale: float = 1.0,
    values: Optional[Sequence[float]] = None,
) -> Spectrum:
    """
    Build an eigenvalue list.

    power(b):        sigma_k = scale * (k+1)^(-1/b),   b in (0, 1)
    exponential(q):  sigma_k = scale * exp(-q k),      q > 0
    custom:          sigma_k = scale * values[k]
    """
    label = DecayLabel.parse(decay_label)
    if n is None or int(n) < 1:
        raise InvalidParameterError(f"Truncation rank must be >= 1 (got {n})")
    if not scale > 0:
        raise InvalidParameterError(f"Spectrum scale must be positive (got {scale})")
    n = int(n)
    k = np.arange(n, dtype=float)

    if label.kind == "power":
        b = label.param
        if not 0 < b < 1:
            raise InvalidParameterError(f"power(b) needs 0 < b < 1 (got {b})")
        eigenvalues = scale * (k + 1.0) ** (-1.0 / b)
    elif label.kind == "exponential":
        q = label.param
        if not q > 0:
            raise InvalidParameterError(f"exponential(q) needs q > 0 (got {q})")
        eigenvalues = scale * np.exp(-q * k)
    else:
        if values is None:
            raise InvalidParameterError("custom spectra need an explicit eigenvalue list")
        eigenvalues = scale * np.asarray(values, dtype=float)
        if eigenvalues.size != n:
            raise InputError(f"custom spectrum has {eigenvalues.size} values but n={n}")

    return Spectrum(eigenvalues=eigenvalues, decay_label=label)


def scale_for_kappa_sq(decay_label: Union[str, DecayLabel], n: int, kappa_sq_target: float,
                       values: Optional[Sequence[float]] = None) -> float:
    """Scale s that makes kappa^2 = sigma_0 + 2 sum_{k>=1} sigma_k equal the target."""
    if not kappa_sq_target > 0:
        raise InvalidParameterError(f"kappa^2 target must be positive (got {kappa_sq_target})")
    unit = build_spectrum(decay_label, n, 1.0, values)
    return kappa_sq_target / _spectral_kappa_sq(unit.eigenvalues)


def eigenfunctions(x, n: int) -> np.ndarray:
    """
    Evaluate phi_0..phi_{n-1} at points x in [0, 1].

    Returns shape (n,) for scalar x, (m, n) for an array of m points.
    """
    points = np.asarray(x, dtype=float)
    if np.any(points < 0.0) or np.any(points > 1.0) or not np.all(np.isfinite(points)):
        raise DomainError("Spectral kernels are defined on [0, 1]")
    k = np.arange(n, dtype=float)
    features = SQRT2 * np.cos(np.multiply.outer(points, k) * math.pi)
    features[..., 0] = 1.0
    return features


# ── Kernels ──────────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class KernelModel:
    """A Mercer kernel: spectral (known eigensystem) or closed-form on [0, 1]^dim."""

    variant: str  # "spectral" | "gaussian" | "polynomial"
    spectrum: Optional[Spectrum] = None
    width: float = 1.0      # gaussian gamma
    degree: int = 1         # polynomial d
    offset: float = 0.0     # polynomial c
    dim: int = 1

    def __post_init__(self):
        if self.variant == "spectral":
            if self.spectrum is None:
                raise InvalidParameterError("Spectral kernels need a Spectrum")
            if self.dim != 1:
                raise InvalidParameterError("Spectral kernels live on [0, 1] (dim=1)")
        elif self.variant == "gaussian":
            if not self.width > 0:
                raise InvalidParameterError(f"Gaussian width must be positive (got {self.width})")
        elif self.variant == "polynomial":
            if int(self.degree) < 1 or self.offset < 0:
                raise InvalidParameterError("Polynomial kernels need degree >= 1 and offset >= 0")
        else:
            raise InvalidParameterError(f"Unknown kernel variant: {self.variant!r}")
        if int(self.dim) < 1:
            raise InvalidParameterError("Kernel dimension must be >= 1")

    @classmethod
    def spectral(cls, spectrum: Spectrum) -> "KernelModel":
        return cls(variant="spectral", spectrum=spectrum)

    @classmethod
    def gaussian(cls, width: float, dim: int = 1) -> "KernelModel":
        return cls(variant="gaussian", width=width, dim=dim)

    @classmethod
    def polynomial(cls, degree: int, offset: float = 0.0, dim: int = 1) -> "KernelModel":
        return cls(variant="polynomial", degree=degree, offset=offset, dim=dim)

    @property
    def is_spectral(self) -> bool:
        return self.variant == "spectral"

    def points(self, x) -> np.ndarray:
        """Coerce x to an (m, dim) array of points inside the domain."""
        arr = np.asarray(x, dtype=float)
        if self.dim == 1:
            arr = arr.reshape(-1, 1)
        else:
            arr = arr.reshape(-1, self.dim)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
            raise DomainError(f"Point outside the domain [0, 1]^{self.dim}")
        return arr

    def gram(self, x, x_prime) -> np.ndarray:
        """Kernel matrix K(x_i, x'_j) of shape (m, m')."""
        a = self.points(x)
        b = self.points(x_prime)
        if self.variant == "spectral":
            sigma = self.spectrum.eigenvalues
            phi_a = eigenfunctions(a[:, 0], sigma.size)
            phi_b = eigenfunctions(b[:, 0], sigma.size)
            return (phi_a * sigma) @ phi_b.T
        if self.variant == "gaussian":
            sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
            return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.width ** 2))
        return (a @ b.T + self.offset) ** int(self.degree)


def _spectral_kappa_sq(eigenvalues: np.ndarray) -> float:
    # sup_x K(x,x) is attained at x = 0 where every cos^2 equals 1
    return float(eigenvalues[0] + 2.0 * math.fsum(eigenvalues[1:]))


def kappa_sq(kernel: KernelModel) -> float:
    """kappa^2 = sup_x K(x, x)."""
    if kernel.variant == "spectral":
        return _spectral_kappa_sq(kernel.spectrum.eigenvalues)
    if kernel.variant == "gaussian":
        return 1.0
    return float((kernel.dim + kernel.offset) ** int(kernel.degree))


def kernel_eval(kernel: KernelModel, x, x_prime) -> float:
    """K(x, x') for a single pair of points."""
    return float(kernel.gram(x, x_prime)[0, 0])


def capacity_trace(spectrum: Spectrum, beta: float) -> float:
    """Tr(L_K^beta) = sum sigma_k^beta; beta = 0 returns the rank."""
    if beta < 0:
        raise InvalidParameterError(f"Capacity index must be >= 0 (got {beta})")
    if beta == 0:
        return float(spectrum.truncation_rank)
    return math.fsum(spectrum.eigenvalues ** beta)


def eigen_decay_bound(spectrum: Union[Spectrum, Sequence[float]], beta: float) -> bool:
    """True iff sigma_k <= k^(-1/beta) Tr(L_K^beta)^(1/beta) for k = 1..n (1-indexed)."""
    if not 0 < beta < 1:
        raise InvalidParameterError(f"Decay check needs 0 < beta < 1 (got {beta})")
    values = spectrum.eigenvalues if isinstance(spectrum, Spectrum) else np.asarray(spectrum, dtype=float)
    trace_beta = math.fsum(values ** beta)
    k = np.arange(1, values.size + 1, dtype=float)
    envelope = k ** (-1.0 / beta) * trace_beta ** (1.0 / beta)
    return bool(np.all(values <= envelope * (1.0 + 1e-12)))


# ── Targets ──────────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class TargetFunction:
    """Regression function f_rho = L_K^r u_rho in eigen-coordinates."""

    coefficients: np.ndarray
    regularity_r: float
    source_coefficients: np.ndarray
    rho_norm_sq: float  # ||f_rho||_rho^2
    k_norm_sq: float    # ||f_rho||_K^2
    u_norm_sq: float    # ||u_rho||_rho^2

    @property
    def rank(self) -> int:
        return int(self.coefficients.size)


def make_target(spectrum: Spectrum, r: float, u_coefficients: Sequence[float]) -> TargetFunction:
    """c_k = sigma_k^r u_k, with all three norms recorded."""
    if not r > 0.5:
        raise UnsupportedRegularityError(f"Source exponent r must exceed 1/2 (got {r})")
    u = np.asarray(u_coefficients, dtype=float).reshape(-1)
    sigma = spectrum.eigenvalues
    if u.size != sigma.size:
        raise InputError(f"Expected {sigma.size} source coefficients, got {u.size}")

    c = sigma ** r * u
    c.setflags(write=False)
    u = u.copy()
    u.setflags(write=False)
    return TargetFunction(
        coefficients=c,
        regularity_r=float(r),
        source_coefficients=u,
        rho_norm_sq=math.fsum(c * c),
        k_norm_sq=math.fsum(c * c / sigma),
        u_norm_sq=math.fsum(u * u),
    )


def make_source(rule: str, n: int, decay: float = 1.0, norm: float = 1.0, seed: int = 0) -> np.ndarray:
    """
    Source coefficients u_0..u_{n-1}.

    first:  u = (norm, 0, ..., 0)
    decay:  u_k proportional to (k+1)^(-decay), rescaled to ||u|| = norm
    random: standard normal draws (PCG64, seed), rescaled to ||u|| = norm
    """
    if rule == "first":
        u = np.zeros(n)
        u[0] = 1.0
    elif rule == "decay":
        u = (np.arange(n, dtype=float) + 1.0) ** (-decay)
    elif rule == "random":
        u = np.random.Generator(np.random.PCG64(seed)).standard_normal(n)
    else:
        raise InvalidParameterError(f"Unknown source rule: {rule!r}")
    length = math.sqrt(math.fsum(u * u))
    if norm == 0 or length == 0:
        return np.zeros(n)
    return u * (norm / length)


def target_eval(target: TargetFunction, spectrum: Optional[Spectrum], x) -> Union[float, np.ndarray]:
    """
    f_rho(x) = sum_k c_k phi_k(x).

    Box-valued inputs (m, dim) are evaluated on their first coordinate.
    """
    if spectrum is not None and spectrum.truncation_rank != target.rank:
        raise InputError("Target and spectrum ranks differ")
    points = np.asarray(x, dtype=float)
    if points.ndim == 2:
        points = points[:, 0]
    values = eigenfunctions(points, target.rank) @ target.coefficients
    return float(values) if np.ndim(values) == 0 else values


# ── Data ─────────────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class DataModel:
    """Joint law of (x, y): x uniform on the domain, y = f_rho(x) + uniform noise on [-s, s]."""

    target: TargetFunction
    noise_halfwidth: float
    output_bound_M: float
    dim: int = 1
    seed: int = 0

    @property
    def noise_risk(self) -> float:
        """E(f_rho) = E[eps^2] = s^2 / 3."""
        return self.noise_halfwidth ** 2 / 3.0


def target_sup_bound(target: TargetFunction) -> float:
    """|c_0| + sqrt(2) sum_{k>=1} |c_k| >= sup_x |f_rho(x)|."""
    c = np.abs(target.coefficients)
    return float(c[0] + SQRT2 * math.fsum(c[1:]))


def make_data_model(target: TargetFunction, noise_halfwidth: float, dim: int = 1, seed: int = 0) -> DataModel:
    if noise_halfwidth < 0:
        raise InvalidParameterError(f"Noise half-width must be >= 0 (got {noise_halfwidth})")
    M = target_sup_bound(target) + noise_halfwidth
    logger.debug(f"Data model: s={noise_halfwidth}, M={M:.6g}, dim={dim}")
    return DataModel(target=target, noise_halfwidth=float(noise_halfwidth),
                     output_bound_M=M, dim=int(dim), seed=int(seed))


def initial_rng_state(seed: int) -> dict:
    """State of a fresh PCG64 generator; the reproducibility contract is bit-identical streams per seed."""
    return np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF).state


def _draw_pair(data_model: DataModel, uniforms: np.ndarray):
    dim = data_model.dim
    x = uniforms[..., :dim]
    eps = data_model.noise_halfwidth * (2.0 * uniforms[..., dim] - 1.0)
    f = target_eval(data_model.target, None, x[..., 0])
    return x, f + eps


def sample_pair(data_model: DataModel, rng_state: dict):
    """
    Draw one (x, y) and return it with the advanced generator state.

    Each pair consumes dim + 1 doubles: the input coordinates, then the noise.
    """
    bit_generator = np.random.PCG64()
    bit_generator.state = rng_state
    uniforms = np.random.Generator(bit_generator).random(data_model.dim + 1)
    x, y = _draw_pair(data_model, uniforms)
    point = float(x[0]) if data_model.dim == 1 else x.copy()
    return (point, float(y)), bit_generator.state


def sample_stream(data_model: DataModel, T: int, seed: int):
    """Bulk form of sample_pair: the same T pairs, as arrays (x of shape (T,) or (T, dim), y of shape (T,))."""
    generator = np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
    uniforms = generator.random((int(T), data_model.dim + 1))
    x, y = _draw_pair(data_model, uniforms)
    if data_model.dim == 1:
        x = x[:, 0]
    return x, y
