"""Online Kernel Lab Core Modules"""

from .errors import OKLError, ConfigError
from .model import KernelModel, Spectrum, TargetFunction, DataModel, build_spectrum, make_target, make_data_model
from .learner import StepSchedule, LearnerState, new_state, sgd_step, regularized_step, run_stream
from .metrics import rho_error_sq, k_error_sq, mc_excess_risk
from .bounds import ProblemProfile, theorem_bound, rate_selector
from .oracle import DiagonalOperatorState, bias_exact, decomposition_rhs

# harness, reporting and verification read config/ and are imported directly

__all__ = [
    "OKLError",
    "ConfigError",
    "KernelModel",
    "Spectrum",
    "TargetFunction",
    "DataModel",
    "build_spectrum",
    "make_target",
    "make_data_model",
    "StepSchedule",
    "LearnerState",
    "new_state",
    "sgd_step",
    "regularized_step",
    "run_stream",
    "rho_error_sq",
    "k_error_sq",
    "mc_excess_risk",
    "ProblemProfile",
    "theorem_bound",
    "rate_selector",
    "DiagonalOperatorState",
    "bias_exact",
    "decomposition_rhs",
]
