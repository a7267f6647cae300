"""
Experiment Harness

Runs multi-seed trials of an experiment, estimates expected errors,
fits log-log rates and compares the estimates against the theoretical bounds.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from config.experiment import ExperimentConfig
from config.settings import settings

from .bounds import (
    THETA_TOL,
    ProblemProfile,
    generalization_bound,
    iterate_constant,
    iterate_norm_bound,
    k_rate_constant,
    k_variance_constant,
    log_iterate_constant,
    rate_constant,
    rate_selector,
    rho_exponent,
    theorem_bound,
    variance_constant,
)
from .errors import CapacityTrivialError, ConfigError, FitError, OKLError
from .learner import StepSchedule, k_norm_sq, run_stream
from .metrics import ErrorRecord, k_error_sq, mc_excess_risk, rho_error_sq
from .model import (
    DataModel,
    DecayLabel,
    KernelModel,
    Spectrum,
    TargetFunction,
    build_spectrum,
    kappa_sq,
    make_data_model,
    make_source,
    make_target,
    scale_for_kappa_sq,
)
from .oracle import DiagonalOperatorState, decomposition_rhs

logger = logging.getLogger(__name__)

NORM_ORDER = ["rho", "K", "iterate"]
AGGREGATE_COLUMNS = ["t", "norm", "mean", "se", "seeds", "algorithm"]


# ── Problem construction ─────────────────────────────────────────────────────


@dataclass
class Problem:
    """Everything a trial needs, built once from an ExperimentConfig."""

    config: ExperimentConfig
    spectrum: Spectrum
    kernel: KernelModel
    target: TargetFunction
    data_model: DataModel
    beta: float
    theta: Optional[float]                 # poly schedules only
    schedule: Optional[StepSchedule]       # None for the horizon rule (one schedule per T)
    profile: Optional[ProblemProfile]      # poly schedules on spectral kernels

    @property
    def is_spectral(self) -> bool:
        return self.kernel.is_spectral

    @property
    def kappa_sq(self) -> float:
        return kappa_sq(self.kernel)

    def horizon_schedule(self, T: int) -> StepSchedule:
        return StepSchedule.constant_horizon(self.config.schedule.eta1, T, self.target.regularity_r,
                                             kappa_sq=self.kappa_sq)


def default_beta(decay: DecayLabel) -> float:
    """Capacity index used when none is configured: b + 0.05 for power(b)."""
    if decay.kind == "power":
        return min(decay.param + 0.05, 0.99)
    return 0.5


def build_problem(config: ExperimentConfig) -> Problem:
    """Build spectrum, kernel, target, data model, schedule and bound profile."""
    m = config.model
    try:
        decay = DecayLabel.parse(m.decay)
        values = m.eigenvalues or None
        if m.scale is not None:
            scale = m.scale
        elif m.kappa_sq is not None:
            scale = scale_for_kappa_sq(decay, m.n, m.kappa_sq, values)
        else:
            scale = 1.0
        spectrum = build_spectrum(decay, m.n, scale, values)

        if m.kernel == "spectral":
            kernel = KernelModel.spectral(spectrum)
        elif m.kernel == "gaussian":
            kernel = KernelModel.gaussian(m.width, m.dim)
        else:
            kernel = KernelModel.polynomial(m.degree, m.offset, m.dim)

        beta = m.beta if m.beta is not None else default_beta(decay)
        u = make_source(m.u_rule, m.n, m.u_decay, m.u_norm, m.u_seed)
        target = make_target(spectrum, m.r, u)
        data_model = make_data_model(target, m.noise, dim=m.dim if not kernel.is_spectral else 1)
        k2 = kappa_sq(kernel)

        s = config.schedule
        theta: Optional[float] = None
        schedule: Optional[StepSchedule] = None
        profile: Optional[ProblemProfile] = None
        if s.variant == "poly":
            if s.theta == "auto":
                if not 0 < beta < 1:
                    raise ConfigError(f"theta = auto needs 0 < beta < 1 (got beta={beta})")
                theta = rate_selector(m.r, beta).theta_star
            else:
                theta = float(s.theta)
            schedule = StepSchedule.poly_decay(s.eta1, theta, kappa_sq=k2)
            if kernel.is_spectral:
                profile = ProblemProfile.from_model(kernel, data_model, s.eta1, theta, beta)
        elif s.variant == "constant":
            if config.run.checkpoints != "horizon":
                schedule = StepSchedule.constant_horizon(s.eta1, max(config.run.T, 1), m.r, kappa_sq=k2)
        else:
            schedule = StepSchedule.regularized(s.a, m.r, s.lambda_factor)
    except ConfigError:
        raise
    except OKLError as e:
        raise ConfigError(f"Invalid experiment: {e}") from e

    if kernel.is_spectral and k2 > 1.0:
        logger.warning(f"kappa^2 = {k2:.4g} > 1: the printed iterate constant may not dominate the variance")
    logger.info(
        f"Problem: {decay} n={m.n} kappa^2={k2:.4g} r={m.r} beta={beta:.4g} "
        f"theta={'-' if theta is None else f'{theta:.6g}'} M={data_model.output_bound_M:.4g}"
    )
    return Problem(config=config, spectrum=spectrum, kernel=kernel, target=target, data_model=data_model,
                   beta=beta, theta=theta, schedule=schedule, profile=profile)


def dyadic_checkpoints(T: int, start: int = 6) -> list[int]:
    """Sample counts {2^start, 2^(start+1), ...} up to T, plus T itself."""
    T = int(T)
    points = []
    power = 2 ** start
    while power <= T:
        points.append(power)
        power *= 2
    if not points or points[-1] != T:
        points.append(T)
    return points


# ── Trials ───────────────────────────────────────────────────────────────────


@dataclass
class TrialResult:
    """One seed's records plus its per-step iterate norms."""

    seed: int
    records: list[ErrorRecord]
    k_norms: Optional[np.ndarray] = None  # ||f||_K^2 after 0..T samples


@dataclass
class TrialBatch:
    """All trials of an experiment, sorted by seed."""

    records: list[ErrorRecord]
    mean_iterate_norms: Optional[np.ndarray] = None  # seed-averaged ||f||_K^2 after 0..T samples
    seeds: list[int] = field(default_factory=list)


def _snapshot_record(problem: Problem, snapshot, seed: int, algorithm: str) -> ErrorRecord:
    use_average = algorithm == "averaged"
    state = snapshot.state
    if problem.is_spectral:
        return ErrorRecord(
            t=snapshot.t,
            rho_sq=rho_error_sq(state, problem.target, use_average),
            k_sq=k_error_sq(state, problem.target, problem.spectrum, use_average),
            seed=seed,
            algorithm=algorithm,
            iterate_k_sq=k_norm_sq(state, use_average),
        )
    risk = mc_excess_risk(state, problem.data_model, problem.config.run.n_test,
                          seed=seed * 1_000_003 + snapshot.t + 1, use_average=use_average)
    return ErrorRecord(t=snapshot.t, rho_sq=risk.value, k_sq=None, seed=seed, algorithm=algorithm)


def run_trial(problem: Problem, seed: int) -> TrialResult:
    """Run one seed of the experiment."""
    config = problem.config
    algorithm = config.algorithm
    representation = config.run.representation if problem.is_spectral else "dual"

    if config.run.checkpoints == "horizon":
        records = []
        for horizon in config.run.horizons:
            trajectory = run_stream(problem.data_model, problem.kernel, problem.horizon_schedule(horizon),
                                    algorithm, horizon, [horizon + 1], seed, representation)
            records.extend(_snapshot_record(problem, snap, seed, algorithm) for snap in trajectory.snapshots)
        return TrialResult(seed=seed, records=records)

    T = config.run.T
    checkpoints = [t + 1 for t in dyadic_checkpoints(T, config.run.checkpoint_start)]
    track = config.run.track_iterates and representation == "primal"
    trajectory = run_stream(problem.data_model, problem.kernel, problem.schedule, algorithm, T,
                            checkpoints, seed, representation, track_norms=track)
    records = [_snapshot_record(problem, snap, seed, algorithm) for snap in trajectory.snapshots]
    return TrialResult(seed=seed, records=records, k_norms=trajectory.k_norms)


def run_trials_detailed(config: ExperimentConfig, problem: Optional[Problem] = None,
                        n_jobs: Optional[int] = None) -> TrialBatch:
    """Run every seed (concurrently up to OKL_PARALLELISM) and collect results in seed order."""
    problem = problem or build_problem(config)
    seeds = [config.base_seed + i for i in range(config.seeds)]
    n_jobs = n_jobs or settings.parallelism
    logger.info(f"Running {len(seeds)} trials ({config.algorithm}, T={config.run.T}) on {n_jobs} workers")

    if n_jobs == 1 or len(seeds) == 1:
        results = [run_trial(problem, seed) for seed in seeds]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(run_trial)(problem, seed) for seed in seeds)
    results = sorted(results, key=lambda r: r.seed)

    records = [record for result in results for record in result.records]
    norms = [r.k_norms for r in results if r.k_norms is not None]
    mean_norms = np.mean(np.vstack(norms), axis=0) if norms and len(norms) == len(results) else None
    return TrialBatch(records=records, mean_iterate_norms=mean_norms, seeds=seeds)


def run_trials(config: ExperimentConfig, problem: Optional[Problem] = None,
               n_jobs: Optional[int] = None) -> list[ErrorRecord]:
    """Error records for every seed and checkpoint, sorted by seed then t."""
    return run_trials_detailed(config, problem, n_jobs).records


# ── Estimation ───────────────────────────────────────────────────────────────


def records_frame(records: Sequence[ErrorRecord]) -> pd.DataFrame:
    """Long-format table (seed, t, algorithm, norm, value), sorted by seed."""
    rows = []
    for record in sorted(records, key=lambda r: (r.seed, r.t)):
        rows.append((record.seed, record.t, record.algorithm, "rho", record.rho_sq))
        if record.k_sq is not None:
            rows.append((record.seed, record.t, record.algorithm, "K", record.k_sq))
        if record.iterate_k_sq is not None:
            rows.append((record.seed, record.t, record.algorithm, "iterate", record.iterate_k_sq))
    return pd.DataFrame(rows, columns=["seed", "t", "algorithm", "norm", "value"])


def aggregate(records: Sequence[ErrorRecord]) -> pd.DataFrame:
    """
    Mean and standard error per (algorithm, norm, t).

    SE = sample std (ddof=1) / sqrt(seeds); a single seed leaves SE as NaN.
    """
    frame = records_frame(records)
    if frame.empty:
        return pd.DataFrame(columns=AGGREGATE_COLUMNS)

    grouped = frame.groupby(["algorithm", "norm", "t"], sort=False)["value"]
    out = grouped.agg(mean="mean", std=lambda v: v.std(ddof=1), seeds="count").reset_index()
    out["se"] = out["std"] / np.sqrt(out["seeds"])
    out["norm"] = pd.Categorical(out["norm"], categories=NORM_ORDER, ordered=True)
    out = out.sort_values(["algorithm", "norm", "t"]).reset_index(drop=True)
    out["norm"] = out["norm"].astype(str)
    out["seeds"] = out["seeds"].astype(int)
    return out[AGGREGATE_COLUMNS]


@dataclass
class RateFit:
    """Least-squares fit of ln(mean) against ln(t)."""

    norm: str
    slope: float
    intercept: float
    r_squared: float
    n_points: int
    theory_exponent: float = math.nan

    def meets(self, tolerance: float) -> bool:
        """slope <= -(theory_exponent - tolerance); vacuous without a theory exponent."""
        if math.isnan(self.theory_exponent):
            return True
        return self.slope <= -(self.theory_exponent - tolerance)


def fit_rate(aggregated: pd.DataFrame, t_min: int, norm: str = "rho", t_max: Optional[int] = None,
             theory_exponent: float = math.nan) -> RateFit:
    """Ordinary least squares on (ln t, ln mean) over checkpoints with t_min <= t <= t_max."""
    rows = aggregated[(aggregated["norm"] == norm) & (aggregated["t"] >= max(t_min, 1))]
    if t_max is not None:
        rows = rows[rows["t"] <= t_max]
    if len(rows) < 3:
        raise FitError(f"Rate fit for {norm} needs >= 3 checkpoints with t >= {t_min} (got {len(rows)})")
    bad = rows[rows["mean"] <= 0]
    if not bad.empty:
        raise FitError(f"Non-positive mean {norm} error at t={int(bad['t'].iloc[0])}")

    X = np.log(rows["t"].to_numpy(dtype=float)).reshape(-1, 1)
    y = np.log(rows["mean"].to_numpy(dtype=float))
    model = LinearRegression().fit(X, y)
    r_squared = float(np.clip(r2_score(y, model.predict(X)), 0.0, 1.0))
    return RateFit(norm=norm, slope=float(model.coef_[0]), intercept=float(model.intercept_),
                   r_squared=r_squared, n_points=len(rows), theory_exponent=theory_exponent)


# ── Bound comparison ─────────────────────────────────────────────────────────


@dataclass
class BoundCheck:
    """One checkpoint of one norm against its bound."""

    norm: str
    t: int
    mean: float
    se: float
    bound: float
    passed: bool
    rhs_empirical: Optional[float] = None  # decomposition with measured iterate norms
    rhs_bound: Optional[float] = None      # decomposition with the iterate bound
    sandwich_passed: Optional[bool] = None


@dataclass
class BoundReport:
    """Per-checkpoint comparisons plus the constants that produced the bounds."""

    checks: list[BoundCheck]
    constants: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c.passed and c.sandwich_passed is not False for c in self.checks)

    @property
    def norms(self) -> list[str]:
        return list(dict.fromkeys(c.norm for c in self.checks))

    def bound_for(self, norm: str, t: int) -> float:
        for check in self.checks:
            if check.norm == norm and check.t == t:
                return check.bound
        return math.nan

    def failures(self) -> list[BoundCheck]:
        return [c for c in self.checks if not c.passed or c.sandwich_passed is False]


def applicable_norms(profile: ProblemProfile) -> tuple[list[str], list[str]]:
    """Norms whose combined bound applies to the profile, and notes for the ones that don't."""
    norms, notes = [], []
    if profile.beta >= 1:
        notes.append("beta = 1: capacity-dependent variance bounds skipped (capacity-trivial case)")
    else:
        if 0 < profile.beta and abs(profile.theta - rate_selector(profile.r, profile.beta).theta_star) <= THETA_TOL:
            norms.append("rho")
        if abs(profile.theta - 0.5) <= THETA_TOL and profile.beta > 0:
            norms.append("K")
    norms.extend(["iterate", "risk"])
    return norms, notes


def _constants(profile: ProblemProfile, norms: Sequence[str]) -> dict[str, float]:
    constants = {"generalization": generalization_bound(profile)}
    if profile.theta > 0.5:
        constants["iterate_constant"] = iterate_constant(profile)
    if "rho" in norms:
        constants["variance_constant"] = variance_constant(profile)
        constants["rate_constant"] = rate_constant(profile)
    if "K" in norms:
        constants["log_iterate_constant"] = log_iterate_constant(profile)
        constants["k_variance_constant"] = k_variance_constant(profile)
        constants["k_rate_constant"] = k_rate_constant(profile)
    return constants


def compare_bounds(aggregated: pd.DataFrame, profile: ProblemProfile, norms: Optional[Sequence[str]] = None,
                   margin_se: float = 2.0, problem: Optional[Problem] = None,
                   mean_iterate_norms: Optional[np.ndarray] = None) -> BoundReport:
    """
    Pass iff mean + margin_se * SE <= bound at each checkpoint (t >= 3).

    With a problem and seed-averaged iterate norms, rho and K rows also check
    measured <= decomposition(empirical) <= decomposition(bound) <= combined bound.
    Norms: rho and K (combined bounds), iterate (iterate-norm bound) and risk
    (E(f) = rho error + E(f_rho) against 20 ||f_rho||^2 + 3 E(f_rho)).
    """
    notes: list[str] = []
    if norms is None:
        norms, notes = applicable_norms(profile)
    constants = _constants(profile, norms)
    sandwich = problem is not None and mean_iterate_norms is not None

    checks = []
    for norm in norms:
        source = "rho" if norm == "risk" else norm
        rows = aggregated[aggregated["norm"] == source]
        for row in rows.itertuples(index=False):
            t = int(row.t)
            se = 0.0 if pd.isna(row.se) else float(row.se)
            mean = float(row.mean)
            if norm == "risk":
                mean += profile.noise_risk
            if t < 3:
                checks.append(BoundCheck(norm=norm, t=t, mean=mean, se=se, bound=math.nan, passed=True))
                continue

            if norm in ("rho", "K"):
                bound = theorem_bound(profile, t, norm)
            elif norm == "iterate":
                bound = iterate_norm_bound(profile, t)
            else:
                bound = generalization_bound(profile)
            check = BoundCheck(norm=norm, t=t, mean=mean, se=se, bound=bound,
                               passed=mean + margin_se * se <= bound)

            if sandwich and norm in ("rho", "K") and mean_iterate_norms.size >= t:
                operator = DiagonalOperatorState(problem.spectrum, problem.schedule, t)
                rhs_emp = decomposition_rhs(problem.spectrum, problem.data_model, problem.schedule, t, norm,
                                            mean_iterate_norms[:t], operator=operator)
                rhs_bound = decomposition_rhs(problem.spectrum, problem.data_model, problem.schedule, t, norm,
                                              "bound", profile=profile, operator=operator)
                slack = 1.0 + 1e-12
                check.rhs_empirical = rhs_emp
                check.rhs_bound = rhs_bound
                check.sandwich_passed = (mean + margin_se * se <= rhs_emp * slack
                                         and rhs_emp <= rhs_bound * slack
                                         and rhs_bound <= bound * slack)
            checks.append(check)

    report = BoundReport(checks=checks, constants=constants, notes=notes)
    for failure in report.failures():
        logger.warning(f"Bound check failed: {failure.norm} t={failure.t} mean={failure.mean:.6g} "
                       f"bound={failure.bound:.6g}")
    return report


# ── Whole experiments ────────────────────────────────────────────────────────


@dataclass
class CheckResult:
    """Outcome of one named check."""

    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    """Everything one `run` produces."""

    problem: Problem
    records: list[ErrorRecord]
    aggregated: pd.DataFrame
    fits: list[RateFit]
    report: Optional[BoundReport]
    checks: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def theory_exponents(problem: Problem) -> dict[str, float]:
    """Rate exponents the theory predicts for this experiment's norms."""
    config = problem.config
    if config.schedule.variant == "constant":
        r = problem.target.regularity_r
        return {"rho": 2 * r / (2 * r + 1)}
    if config.algorithm != "last" or problem.profile is None:
        return {}
    norms, _ = applicable_norms(problem.profile)
    exponents = {}
    if "rho" in norms:
        exponents["rho"] = rho_exponent(problem.profile)
    if "K" in norms:
        exponents["K"] = rate_selector(problem.profile.r, problem.profile.beta).k_exponent
    return exponents


def _trend_check(aggregated: pd.DataFrame, factor: float) -> CheckResult:
    means = aggregated[aggregated["norm"] == "rho"].sort_values("t")
    means = means[means["t"] >= 1]["mean"].to_list()
    for index in range(1, len(means)):
        if means[index] > factor * means[index - 1]:
            return CheckResult("trend", False, f"checkpoint {index}: {means[index]:.4g} > {factor} x {means[index - 1]:.4g}")
    return CheckResult("trend", True, f"{len(means)} checkpoints non-increasing within x{factor}")


def run_experiment(config: ExperimentConfig, n_jobs: Optional[int] = None) -> ExperimentResult:
    """Trials, aggregation, rate fits, bound comparison and the pass/fail checks of one experiment."""
    problem = build_problem(config)
    batch = run_trials_detailed(config, problem, n_jobs)
    aggregated = aggregate(batch.records)
    run = config.run
    checks: list[CheckResult] = []

    exponents = theory_exponents(problem)
    fits = []
    fit_norms = ["rho", "K"] if problem.is_spectral else ["rho"]
    t_min = 1 if run.checkpoints == "horizon" else run.fit_t_min
    for norm in fit_norms:
        try:
            fit = fit_rate(aggregated, t_min, norm, theory_exponent=exponents.get(norm, math.nan))
        except FitError as e:
            logger.info(f"No {norm} rate fit: {e}")
            continue
        fits.append(fit)
        if norm in exponents:
            checks.append(CheckResult(
                f"rate[{norm}]", fit.meets(run.slope_tolerance),
                f"slope {fit.slope:.4f} vs required <= {-(fit.theory_exponent - run.slope_tolerance):.4f}",
            ))

    report = None
    if problem.profile is not None and config.algorithm == "last":
        try:
            report = compare_bounds(aggregated, problem.profile, margin_se=run.margin_se, problem=problem,
                                    mean_iterate_norms=batch.mean_iterate_norms)
        except CapacityTrivialError as e:
            logger.warning(f"Bound comparison skipped: {e}")
        else:
            for norm in report.norms:
                rows = [c for c in report.checks if c.norm == norm]
                failed = [c for c in rows if not c.passed or c.sandwich_passed is False]
                detail = f"{len(rows) - len(failed)}/{len(rows)} checkpoints within bound"
                if failed:
                    detail += f"; first failure t={failed[0].t}"
                checks.append(CheckResult(f"bound[{norm}]", not failed, detail))

    if config.algorithm in ("averaged", "regularized"):
        checks.append(_trend_check(aggregated, run.trend_factor))

    return ExperimentResult(problem=problem, records=batch.records, aggregated=aggregated,
                            fits=fits, report=report, checks=checks)


# ── Sweeps ───────────────────────────────────────────────────────────────────


SWEEP_COLUMNS = ["r", "beta", "theta", "norm", "slope", "theory_exponent", "all_pass"]


def sweep_points(config: ExperimentConfig) -> list[dict]:
    """Cartesian product of the [sweep] lists; empty lists keep the base value."""
    rs = config.sweep.r or [config.model.r]
    betas = config.sweep.beta or [config.model.beta]
    thetas = config.sweep.theta or [str(config.schedule.theta)]
    return [{"r": r, "beta": beta, "theta": theta} for r in rs for beta in betas for theta in thetas]


def _theta_value(text: str):
    return "auto" if str(text).lower() == "auto" else float(text)


def run_sweep(config: ExperimentConfig, n_jobs: Optional[int] = None, on_point=None) -> pd.DataFrame:
    """
    Run one experiment per grid point.

    on_point(point_config, result_or_error) is called after each point,
    e.g. to write its outputs.
    """
    rows = []
    for point in sweep_points(config):
        label = f"r{point['r']:g}_beta{'auto' if point['beta'] is None else format(point['beta'], 'g')}_theta{point['theta']}"
        point_config = config.replace(r=point["r"], beta=point["beta"], theta=_theta_value(point["theta"]),
                                      output_dir=config.output_dir / label)
        try:
            result = run_experiment(point_config, n_jobs)
        except OKLError as e:
            logger.warning(f"Sweep point {label} failed: {e}")
            rows.append([point["r"], point["beta"], point["theta"], "rho", math.nan, math.nan, False])
            if on_point:
                on_point(point_config, e)
            continue

        theta = result.problem.theta
        beta = result.problem.beta
        for fit in result.fits or [None]:
            rows.append([
                point["r"], beta, theta if theta is not None else point["theta"],
                fit.norm if fit else "rho",
                fit.slope if fit else math.nan,
                fit.theory_exponent if fit else math.nan,
                result.passed,
            ])
        if on_point:
            on_point(point_config, result)
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
