"""
Experiment File Schema

Maps the sections of an experiment file to Python structures.

An experiment file is flat key = value pairs in [model], [algorithm],
[schedule], [run], [output] and [sweep] sections, with # comments:

    [model]
    decay = power(0.25)
    n = 256
    kappa_sq = 0.9
    r = 1.0
    noise = 0.3

    [schedule]
    variant = poly
    eta1 = 0.5
    theta = auto
"""

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

from src.errors import ConfigError

from .settings import settings


def _floats(text: str) -> list[float]:
    return [float(item) for item in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(item) for item in text.replace(",", " ").split()]


def _strings(text: str) -> list[str]:
    return [item for item in text.replace(",", " ").split()]


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "yes", "true", "on"):
        return True
    if value in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _theta(text: str) -> Union[str, float]:
    return "auto" if text.strip().lower() == "auto" else float(text)


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _Section:
    """Shared parsing for section dataclasses; subclasses declare PARSERS per key."""

    NAME = ""
    PARSERS: dict[str, Callable[[str], Any]] = {}

    @classmethod
    def from_section(cls, items: dict[str, str]):
        values = {}
        for key, raw in items.items():
            if key not in cls.PARSERS:
                raise ConfigError(f"[{cls.NAME}] unknown key {key!r}")
            try:
                values[key] = cls.PARSERS[key](raw)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"[{cls.NAME}] {key} = {raw!r}: {e}") from e
        return cls(**values)

    def to_section(self) -> dict[str, str]:
        """Convert back to key = value strings."""
        return {
            f.name: _format(getattr(self, f.name))
            for f in dataclasses.fields(self)
            if getattr(self, f.name) is not None
        }


@dataclass
class ModelSection(_Section):
    """Spectrum, kernel, target and noise."""

    NAME = "model"

    # Spectrum
    decay: str = "power(0.25)"
    n: int = 256
    scale: Optional[float] = None        # explicit scale; otherwise kappa_sq decides
    kappa_sq: Optional[float] = 0.9      # target kappa^2 when no scale is given
    eigenvalues: list[float] = field(default_factory=list)  # custom spectra only
    beta: Optional[float] = None         # capacity index; default b + 0.05 for power(b)

    # Kernel
    kernel: str = "spectral"             # spectral | gaussian | polynomial
    width: float = 0.5
    degree: int = 2
    offset: float = 1.0
    dim: int = 1

    # Target and noise
    r: float = 1.0
    u_rule: str = "decay"                # decay | first | random
    u_decay: float = 1.0
    u_norm: float = 1.0
    u_seed: int = 0
    noise: float = 0.3

    PARSERS = {
        "decay": str.strip, "n": int, "scale": _optional_float, "kappa_sq": _optional_float,
        "eigenvalues": _floats, "beta": _optional_float, "kernel": str.strip, "width": float,
        "degree": int, "offset": float, "dim": int, "r": float, "u_rule": str.strip,
        "u_decay": float, "u_norm": float, "u_seed": int, "noise": float,
    }


@dataclass
class ScheduleSection(_Section):
    """Step sizes: poly (eta1 t^-theta), constant (eta1 T^-2r/(2r+1)) or regularized."""

    NAME = "schedule"

    variant: str = "poly"
    eta1: float = 0.5
    theta: Union[str, float] = "auto"    # auto = rate-optimal exponent for (r, beta)
    a: float = 2.0                       # regularized only
    lambda_factor: float = 1.0           # regularized only; 0 switches the penalty off

    PARSERS = {
        "variant": str.strip, "eta1": float, "theta": _theta, "a": float, "lambda_factor": float,
    }


@dataclass
class RunSection(_Section):
    """Horizon, checkpoints, seeds and pass criteria."""

    NAME = "run"

    T: int = 16384
    checkpoints: str = "dyadic"          # dyadic | horizon
    checkpoint_start: int = 6            # first dyadic checkpoint is 2^start
    horizons: list[int] = field(default_factory=list)  # horizon rule only
    seeds: Optional[int] = None          # defaults to OKL_DEFAULT_SEEDS
    base_seed: Optional[int] = None      # defaults to OKL_BASE_SEED
    representation: str = "primal"       # primal | dual
    track_iterates: bool = True          # record ||f_t||_K^2 every step (primal only)
    n_test: int = 4096                   # Monte Carlo test points for closed-form kernels
    fit_t_min: int = 256
    slope_tolerance: float = 0.15        # fitted slope must be <= -(exponent - tolerance)
    trend_factor: float = 1.1            # averaged / regularized: mean <= factor * previous mean
    margin_se: float = 2.0               # pass iff mean + margin_se * SE <= bound

    PARSERS = {
        "T": int, "checkpoints": str.strip, "checkpoint_start": int, "horizons": _ints,
        "seeds": int, "base_seed": int, "representation": str.strip, "track_iterates": _bool,
        "n_test": int, "fit_t_min": int, "slope_tolerance": float, "trend_factor": float,
        "margin_se": float,
    }


@dataclass
class SweepSection(_Section):
    """Cartesian grid for the sweep command; empty lists keep the base value."""

    NAME = "sweep"

    r: list[float] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    theta: list[str] = field(default_factory=list)  # floats or "auto"

    PARSERS = {"r": _floats, "beta": _floats, "theta": _strings}


@dataclass
class VerifySection(_Section):
    """Grid for verify-bounds; eta1 values above 1/kappa^2 are replaced by 0.9/kappa^2."""

    NAME = "verify"

    theta: list[float] = field(default_factory=lambda: [0.5, 0.55, 2.0 / 3.0, 0.75, 0.9])
    eta1: list[float] = field(default_factory=lambda: [0.1, 0.5])
    include_max_eta: bool = True         # also test eta1 = 0.9 / kappa^2
    r: list[float] = field(default_factory=lambda: [0.6, 1.0, 2.0])
    beta: list[float] = field(default_factory=lambda: [0.3, 0.5, 0.8])
    t: list[int] = field(default_factory=lambda: [3, 10, 100, 1000, 100000])

    PARSERS = {
        "theta": _floats, "eta1": _floats, "include_max_eta": _bool, "r": _floats,
        "beta": _floats, "t": _ints,
    }


@dataclass
class ExperimentConfig:
    """A complete experiment description."""

    model: ModelSection = field(default_factory=ModelSection)
    algorithm: str = "last"              # last | averaged | regularized
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    run: RunSection = field(default_factory=RunSection)
    output_dir: Path = field(default_factory=lambda: settings.output_dir)
    sweep: SweepSection = field(default_factory=SweepSection)
    verify: VerifySection = field(default_factory=VerifySection)
    source: Optional[Path] = None

    @property
    def seeds(self) -> int:
        return self.run.seeds if self.run.seeds is not None else settings.default_seeds

    @property
    def base_seed(self) -> int:
        return self.run.base_seed if self.run.base_seed is not None else settings.base_seed

    def validate(self) -> list[str]:
        """Static checks that don't need the model built."""
        errors = []
        if self.algorithm not in ("last", "averaged", "regularized"):
            errors.append(f"[algorithm] name must be last, averaged or regularized (got {self.algorithm!r})")
        if self.schedule.variant not in ("poly", "constant", "regularized"):
            errors.append(f"[schedule] unknown variant {self.schedule.variant!r}")
        if (self.algorithm == "regularized") != (self.schedule.variant == "regularized"):
            errors.append("The regularized algorithm needs the regularized schedule (and only it)")
        if self.run.T < 0:
            errors.append("[run] T must be >= 0")
        if self.seeds < 1:
            errors.append("[run] seeds must be >= 1")
        if self.run.checkpoints not in ("dyadic", "horizon"):
            errors.append(f"[run] unknown checkpoint rule {self.run.checkpoints!r}")
        if self.run.checkpoints == "horizon" and not self.run.horizons:
            errors.append("[run] the horizon rule needs a horizons list")
        if self.run.checkpoints == "horizon" and self.schedule.variant != "constant":
            errors.append("[run] the horizon rule goes with the constant schedule")
        if self.run.representation not in ("primal", "dual"):
            errors.append(f"[run] unknown representation {self.run.representation!r}")
        if self.model.kernel not in ("spectral", "gaussian", "polynomial"):
            errors.append(f"[model] unknown kernel {self.model.kernel!r}")
        return errors

    @classmethod
    def from_text(cls, text: str, source: Optional[Path] = None) -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str  # keys are case-sensitive (T)
        try:
            parser.read_string(text, source=str(source or "<string>"))
        except configparser.Error as e:
            raise ConfigError(f"Malformed experiment file: {e}") from e

        known = {"model", "algorithm", "schedule", "run", "output", "sweep", "verify"}
        for name in parser.sections():
            if name not in known:
                raise ConfigError(f"Unknown section [{name}]")

        def items(name: str) -> dict[str, str]:
            return dict(parser.items(name)) if parser.has_section(name) else {}

        algorithm = items("algorithm")
        extra = set(algorithm) - {"name"}
        if extra:
            raise ConfigError(f"[algorithm] unknown key {sorted(extra)[0]!r}")
        output = items("output")
        extra = set(output) - {"dir"}
        if extra:
            raise ConfigError(f"[output] unknown key {sorted(extra)[0]!r}")

        config = cls(
            model=ModelSection.from_section(items("model")),
            algorithm=algorithm.get("name", "last").strip(),
            schedule=ScheduleSection.from_section(items("schedule")),
            run=RunSection.from_section(items("run")),
            output_dir=Path(output["dir"]).expanduser() if "dir" in output else settings.output_dir,
            sweep=SweepSection.from_section(items("sweep")),
            verify=VerifySection.from_section(items("verify")),
            source=source,
        )
        errors = config.validate()
        if errors:
            raise ConfigError("; ".join(errors))
        return config

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"Cannot read experiment file {path}: {e}") from e
        return cls.from_text(text, source=path)

    def to_text(self) -> str:
        """Serialize back to experiment-file text."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser["model"] = self.model.to_section()
        parser["algorithm"] = {"name": self.algorithm}
        parser["schedule"] = self.schedule.to_section()
        parser["run"] = self.run.to_section()
        parser["output"] = {"dir": str(self.output_dir)}
        sweep = {key: value for key, value in self.sweep.to_section().items() if value}
        if sweep:
            parser["sweep"] = sweep
        parser["verify"] = self.verify.to_section()
        lines = []
        for name in parser.sections():
            lines.append(f"[{name}]")
            lines.extend(f"{key} = {value}" for key, value in parser[name].items())
            lines.append("")
        return "\n".join(lines)

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with section fields replaced, e.g. replace(r=2.0, theta=0.6, T=1024, output_dir=...)."""
        model_keys = {f.name for f in dataclasses.fields(ModelSection)}
        schedule_keys = {f.name for f in dataclasses.fields(ScheduleSection)}
        run_keys = {f.name for f in dataclasses.fields(RunSection)}
        model = {k: v for k, v in changes.items() if k in model_keys}
        schedule = {k: v for k, v in changes.items() if k in schedule_keys}
        run = {k: v for k, v in changes.items() if k in run_keys}
        top = {k: v for k, v in changes.items() if k not in model_keys | schedule_keys | run_keys}
        return dataclasses.replace(
            self,
            model=dataclasses.replace(self.model, **model),
            schedule=dataclasses.replace(self.schedule, **schedule),
            run=dataclasses.replace(self.run, **run),
            **top,
        )
