"""
Bound and Oracle Verification

Grid checks of the closed-form envelopes against exact per-eigenvalue
computation (verify-bounds), and the representation / operator-inequality /
Monte Carlo consistency checks (oracle-check).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from config.experiment import ExperimentConfig

from .bounds import (
    ProblemProfile,
    StepSums,
    bias_bound_K,
    bias_bound_rho,
    rate_selector,
    stepsum_bounds,
    trace_envelope,
    variance_bound_rho,
)
from .errors import CapacityTrivialError, InvalidParameterError
from .harness import CheckResult, Problem, build_problem
from .learner import StepSchedule, predict, run_stream
from .metrics import mc_excess_risk, rho_error_sq
from .model import (
    DecayLabel,
    build_spectrum,
    kappa_sq,
    make_data_model,
    make_source,
    make_target,
)
from .oracle import (
    DiagonalOperatorState,
    bias_exact,
    decomposition_rhs,
    noise_dominance_check,
    psd_congruence_check,
    trace_terms,
)

logger = logging.getLogger(__name__)

REL_TOL = 1e-10


@dataclass
class _Family:
    """Running tally for one family of grid checks."""

    name: str
    total: int = 0
    failures: int = 0
    first_failure: str = ""
    skipped: list[str] = field(default_factory=list)

    def record(self, ok: bool, where: Callable[[], str]) -> None:
        self.total += 1
        if not ok:
            self.failures += 1
            if not self.first_failure:
                self.first_failure = where()
                logger.warning(f"{self.name}: {self.first_failure}")

    def result(self) -> CheckResult:
        detail = f"{self.total - self.failures}/{self.total} passed"
        if self.first_failure:
            detail += f"; first failure: {self.first_failure}"
        if self.skipped:
            detail += f"; skipped: {', '.join(sorted(set(self.skipped)))}"
        return CheckResult(self.name, self.failures == 0, detail)


def _le(a: float, b: float) -> bool:
    return a <= b * (1.0 + REL_TOL) + 1e-300


def first_tail_failure(sums: StepSums) -> Optional[int]:
    """First i whose exact tail falls below its lower bound, or None."""
    bad = np.nonzero(sums.tails() < sums.tail_bounds() * (1.0 - REL_TOL) - 1e-300)[0]
    return int(bad[0]) + 1 if bad.size else None


def verify_bound_grid(config: ExperimentConfig) -> list[CheckResult]:
    """
    Check every envelope on the [verify] grid:

      step sums     lower <= sum eta <= upper, sum eta^2 <= bound, tails >= tail bound
      bias          exact bias <= L2 bias bound (all theta) and RKHS bias bound (theta = 1/2)
      trace         exact trace terms (p = 2 and p = 1) <= capacity envelope
      variance      exact variance side with the iterate bound <= L2 variance bound at theta*
    """
    problem = build_problem(config.replace(kernel="spectral", dim=1, variant="poly", theta=0.5))
    spectrum = problem.spectrum
    k2 = kappa_sq(problem.kernel)
    grid = config.verify
    eta1s = [e for e in grid.eta1 if e * k2 < 1]
    if grid.include_max_eta:
        eta1s.append(0.9 / k2)
    m = config.model
    u = make_source(m.u_rule, m.n, m.u_decay, m.u_norm, m.u_seed)

    sums = _Family("step sums")
    bias_rho = _Family("bias[rho]")
    bias_k = _Family("bias[K]")
    trace_rho = _Family("trace[rho]")
    trace_k = _Family("trace[K]")
    variance = _Family("variance[rho]")

    targets = {r: make_target(spectrum, r, u) for r in grid.r}
    models = {r: make_data_model(targets[r], m.noise) for r in grid.r}

    for theta in grid.theta:
        for eta1 in eta1s:
            for t in grid.t:
                where = f"theta={theta:.4g} eta1={eta1:.4g} t={t}"
                s = stepsum_bounds(eta1, theta, t)
                if s.envelopes_tested:
                    sums.record(_le(s.lower, s.total) and _le(s.total, s.upper), lambda: f"sum at {where}")
                    sums.record(_le(s.total_sq, s.sq_bound), lambda: f"sum of squares at {where}")
                    failure = first_tail_failure(s)
                    sums.record(failure is None, lambda: f"tail at i={failure}, {where}")

                operator = DiagonalOperatorState(spectrum, StepSchedule.poly_decay(eta1, theta, kappa_sq=k2), t)
                for r in grid.r:
                    profile = ProblemProfile.from_model(problem.kernel, models[r], eta1, theta, 1.0)
                    exact = bias_exact(spectrum, targets[r], operator.etas, t, "rho", operator)
                    bias_rho.record(_le(exact, bias_bound_rho(profile, t)), lambda: f"r={r} {where}")
                    if abs(theta - 0.5) < 1e-12:
                        exact_k = bias_exact(spectrum, targets[r], operator.etas, t, "K", operator)
                        bias_k.record(_le(exact_k, bias_bound_K(profile, t)), lambda: f"r={r} {where}")

                tails = stepsum_bounds(eta1, theta, t).tails()
                for power, family in ((2, trace_rho), (1, trace_k)):
                    terms = trace_terms(operator, power)
                    for beta in grid.beta:
                        if beta >= 1:
                            family.skipped.append("beta=1 (capacity-trivial)")
                            continue
                        profile = ProblemProfile.from_model(problem.kernel, models[grid.r[0]], eta1, theta, beta)
                        envelope = np.array([trace_envelope(profile, tail, power) for tail in tails])
                        bad = np.nonzero(terms > envelope * (1.0 + REL_TOL) + 1e-300)[0]
                        family.record(bad.size == 0,
                                      lambda: f"p={power} beta={beta} i={bad[0] + 1 if bad.size else 0} {where}")

    for r in grid.r:
        for beta in grid.beta:
            if not 0 < beta < 1:
                variance.skipped.append(f"beta={beta:g}")
                continue
            theta = rate_selector(r, beta).theta_star
            for eta1 in eta1s:
                profile = ProblemProfile.from_model(problem.kernel, models[r], eta1, theta, beta)
                schedule = StepSchedule.poly_decay(eta1, theta, kappa_sq=k2)
                for t in grid.t:
                    operator = DiagonalOperatorState(spectrum, schedule, t)
                    rhs = decomposition_rhs(spectrum, models[r], operator.etas, t, "rho", "bound",
                                            profile=profile, operator=operator)
                    side = rhs - bias_exact(spectrum, targets[r], operator.etas, t, "rho", operator)
                    try:
                        bound = variance_bound_rho(profile, t).value
                    except (CapacityTrivialError, InvalidParameterError):
                        variance.skipped.append(f"r={r:g} beta={beta:g} (theta*={theta:.4g})")
                        continue
                    variance.record(_le(side, bound),
                                    lambda: f"r={r} beta={beta} theta={theta:.4g} eta1={eta1:.4g} t={t}")

    results = [f.result() for f in (sums, bias_rho, bias_k, trace_rho, trace_k, variance)]
    for result in results:
        logger.info(f"{result.name}: {result.detail}")
    return results


# ── Oracle checks ────────────────────────────────────────────────────────────


@dataclass
class OracleSettings:
    """Sizes for oracle-check."""

    T: int = 2000
    n: int = 64
    seeds: int = 5
    probes: int = 100
    psd_trials: int = 1000
    psd_dim: int = 8
    dominance_pairs: int = 50
    mc_test_points: int = 100_000


def representation_problem(config: ExperimentConfig, n: int) -> Problem:
    """The config's spectral problem truncated to rank n, with a poly schedule."""
    changes = {"n": n, "kernel": "spectral", "dim": 1}
    if config.schedule.variant != "poly":
        changes["variant"] = "poly"
        changes["theta"] = 0.5
    point = config.replace(**changes, algorithm="last")
    return build_problem(point)


def representation_check(problem: Problem, T: int, seeds: list[int], probes: int) -> tuple[CheckResult, list]:
    """Primal and dual runs of the same stream agree pointwise within 1e-8 relative."""
    checkpoints = sorted({1, max(T // 4, 1) + 1, T + 1})
    worst = 0.0
    finals = []
    for seed in seeds:
        primal = run_stream(problem.data_model, problem.kernel, problem.schedule, "last", T, checkpoints,
                            seed, "primal")
        dual = run_stream(problem.data_model, problem.kernel, problem.schedule, "last", T, checkpoints,
                          seed, "dual")
        xs = np.random.Generator(np.random.PCG64(seed + 7919)).random(probes)
        for p, d in zip(primal.snapshots, dual.snapshots):
            a = predict(p.state, xs)
            b = predict(d.state, xs)
            scale = max(float(np.max(np.abs(a))), 1e-12)
            worst = max(worst, float(np.max(np.abs(a - b))) / scale)
        finals.append(primal.snapshots[-1].state)
    passed = worst <= 1e-8
    return CheckResult("representation", passed, f"max relative gap {worst:.2e} over {len(seeds)} seeds"), finals


def dominance_pairs(rank: int, count: int, seed: int):
    generator = np.random.Generator(np.random.PCG64(seed))
    return [(generator.standard_normal(rank), generator.standard_normal(rank)) for _ in range(count)]


def oracle_checks(config: ExperimentConfig, sizes: Optional[OracleSettings] = None) -> list[CheckResult]:
    """Run every oracle check; each returns a CheckResult."""
    sizes = sizes or OracleSettings()
    results = []
    base = config.base_seed

    problem = representation_problem(config, sizes.n)
    seeds = [base + i for i in range(sizes.seeds)]
    check, finals = representation_check(problem, sizes.T, seeds, sizes.probes)
    results.append(check)

    ok = psd_congruence_check(sizes.psd_dim, sizes.psd_trials, base)
    results.append(CheckResult("psd congruence", ok, f"{sizes.psd_trials} trials, dim {sizes.psd_dim}"))

    spectrum = build_spectrum(DecayLabel("custom"), 3, 1.0, [1.0, 0.25, 0.0625])
    target = make_target(spectrum, config.model.r, make_source("random", 3, seed=base + 1))
    data_model = make_data_model(target, config.model.noise)
    ok = noise_dominance_check(data_model, spectrum, dominance_pairs(3, sizes.dominance_pairs, base + 2))
    results.append(CheckResult("noise dominance", ok, f"{sizes.dominance_pairs} random pairs on a rank-3 spectrum"))

    worst = 0.0
    ok = True
    for index, state in enumerate(finals):
        exact = rho_error_sq(state, problem.target)
        estimate = mc_excess_risk(state, problem.data_model, sizes.mc_test_points, seed=base + 104_729 + index)
        gap = abs(estimate.value - exact) / max(estimate.se, 1e-300)
        worst = max(worst, gap)
        ok = ok and abs(estimate.value - exact) <= 3.0 * estimate.se + 1e-15
    results.append(CheckResult("monte carlo risk", ok, f"max gap {worst:.2f} SE over {len(finals)} states"))

    for result in results:
        logger.info(f"{result.name}: {'pass' if result.passed else 'FAIL'} ({result.detail})")
    return results

