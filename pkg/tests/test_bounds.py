"""
Tests for the convergence bounds.
"""

import math

import numpy as np
import pytest


def _profile(**overrides):
    from src.bounds import ProblemProfile

    values = dict(
        r=1.0, beta=0.5, eta1=0.5, theta=0.75, kappa_sq=1.0, M=1.0,
        rho_norm_f=0.26, k_norm_f=0.29, rho_norm_u=1.0, noise_risk=0.03, trace_beta=1.5,
    )
    values.update(overrides)
    return ProblemProfile(**values)


class TestProblemProfile:
    """Test profile validation."""

    def test_contraction(self):
        from src.errors import InvalidParameterError

        with pytest.raises(InvalidParameterError):
            _profile(eta1=1.0, kappa_sq=1.0)

    def test_theta_range(self):
        from src.errors import InvalidParameterError

        with pytest.raises(InvalidParameterError):
            _profile(theta=1.0)
        with pytest.raises(InvalidParameterError):
            _profile(theta=0.4)

    def test_regularity(self):
        from src.errors import UnsupportedRegularityError

        with pytest.raises(UnsupportedRegularityError):
            _profile(r=0.5)

    def test_from_model(self):
        """Scalars are collected from a spectral problem."""
        from src.bounds import ProblemProfile
        from src.model import KernelModel, build_spectrum, make_data_model, make_target

        spectrum = build_spectrum("custom", 2, 1.0, [1.0, 0.25])
        data = make_data_model(make_target(spectrum, 1.0, [0.5, 0.4]), 0.3)
        profile = ProblemProfile.from_model(KernelModel.spectral(spectrum), data, 0.5, 0.5, 0.5)
        assert profile.kappa_sq == pytest.approx(1.5)
        assert profile.rho_norm_f == pytest.approx(0.26)
        assert profile.k_norm_f == pytest.approx(0.29)
        assert profile.noise_risk == pytest.approx(0.03)
        assert profile.trace_beta == pytest.approx(1.5)
        assert profile.M == pytest.approx(0.5 + 0.1 * math.sqrt(2) + 0.3)


class TestStepSums:
    """Test the step-size sum envelopes."""

    def test_small_example(self):
        from src.bounds import stepsum_bounds

        s = stepsum_bounds(0.5, 0.5, 4)
        assert s.total == pytest.approx(1.392228, abs=1e-6)
        assert s.lower == pytest.approx(0.585786, abs=1e-6)
        assert s.upper == pytest.approx(2.0)
        assert s.total_sq == pytest.approx(0.520833, abs=1e-6)
        assert s.sq_bound == pytest.approx(0.693147, abs=1e-6)
        assert s.lower <= s.total <= s.upper
        assert s.envelopes_tested

    def test_square_sum_bound_large_t(self):
        from src.bounds import stepsum_bounds

        s = stepsum_bounds(0.5, 0.75, 1_000_000)
        assert s.sq_bound == pytest.approx(0.75)
        assert s.total_sq <= s.sq_bound

    def test_tails(self):
        """Exact tails dominate the tail bound and match tail(i)."""
        from src.bounds import stepsum_bounds

        s = stepsum_bounds(0.3, 0.6, 50)
        tails = s.tails()
        assert tails[-1] == 0.0
        assert tails[9] == pytest.approx(s.tail(10))
        assert s.tail_bounds()[9] == pytest.approx(s.tail_bound(10))
        assert np.all(tails >= s.tail_bounds() - 1e-12)

    @pytest.mark.parametrize("theta", [0.55, 0.75])
    @pytest.mark.parametrize("t", [3, 1000, 100000])
    def test_empty_tail_bound_is_zero(self, theta, t):
        from src.bounds import stepsum_bounds

        s = stepsum_bounds(0.1, theta, t)
        assert s.tail_bounds()[-1] == 0.0
        assert s.tail_bound(t) == 0.0

    def test_below_three_not_tested(self):
        from src.bounds import stepsum_bounds

        s = stepsum_bounds(0.5, 0.5, 2)
        assert not s.envelopes_tested
        assert s.total == pytest.approx(0.5 + 0.5 / math.sqrt(2))

    def test_invalid(self):
        from src.bounds import stepsum_bounds
        from src.errors import InvalidParameterError

        with pytest.raises(InvalidParameterError):
            stepsum_bounds(0.5, 1.0, 10)


class TestIterateBound:
    """Test the uniform bound on E ||f_t||_K^2."""

    def test_plug_in(self):
        from src.bounds import iterate_norm_bound

        assert iterate_norm_bound(_profile(), 100) == pytest.approx(9.095)

    def test_zero_problem(self):
        from src.bounds import iterate_norm_bound

        profile = _profile(rho_norm_f=0.0, k_norm_f=0.0, noise_risk=0.0, M=0.0)
        assert iterate_norm_bound(profile, 50) == 0.0

    def test_log_branch(self):
        """At t = e the theta = 1/2 bound is the bracket itself."""
        from src.bounds import generalization_bound, iterate_norm_bound

        profile = _profile(theta=0.5)
        bracket = 4 * 0.29 + 4 * 0.25 * 1.0 * generalization_bound(profile)
        assert iterate_norm_bound(profile, math.e) == pytest.approx(bracket)

    def test_generalization(self):
        from src.bounds import generalization_bound

        assert generalization_bound(_profile()) == pytest.approx(20 * 0.26 + 3 * 0.03)


class TestBias:
    """Test bias bounds."""

    def test_rho_example(self):
        from src.bounds import bias_bound_rho

        assert bias_bound_rho(_profile(theta=0.5), 100) == pytest.approx(0.0157758, rel=1e-4)

    def test_zero_source(self):
        from src.bounds import bias_bound_K, bias_bound_rho

        profile = _profile(theta=0.5, rho_norm_u=0.0)
        assert bias_bound_rho(profile, 100) == 0.0
        assert bias_bound_K(profile, 100) == 0.0

    def test_k_example(self):
        from src.bounds import bias_bound_K

        assert bias_bound_K(_profile(theta=0.5), 100) == pytest.approx(0.1256011, rel=1e-4)

    def test_k_needs_half(self):
        from src.bounds import bias_bound_K
        from src.errors import InvalidParameterError

        with pytest.raises(InvalidParameterError):
            bias_bound_K(_profile(theta=0.6), 100)


class TestVariance:
    """Test variance bounds and their constants."""

    def test_zero_problem(self):
        from src.bounds import variance_bound_rho

        profile = _profile(rho_norm_f=0.0, k_norm_f=0.0, noise_risk=0.0, M=0.0)
        bound = variance_bound_rho(profile, 100)
        assert bound.iterate_constant == 0.0
        assert bound.value == 0.0

    def test_iterate_constant(self):
        from src.bounds import iterate_constant

        expected = 8 * 0.29 + 8 * 0.75 * 0.25 / 0.5 * (20 * 0.26 + 0.09) + 2.0
        assert iterate_constant(_profile()) == pytest.approx(expected)

    def test_balanced_exponent(self):
        """At theta*(r, 0.3) both variance exponents coincide."""
        from src.bounds import variance_exponent_rho

        profile = _profile(beta=0.3, theta=1.7 / 2.7)
        assert variance_exponent_rho(profile) == pytest.approx(0.629630, abs=1e-6)
        assert (2 - 0.3) * (1 - profile.theta) == pytest.approx(profile.theta)

    def test_non_increasing(self):
        from src.bounds import variance_bound_rho

        values = [variance_bound_rho(_profile(), t).value for t in (3, 10, 100, 1000)]
        assert values == sorted(values, reverse=True)

    def test_capacity_trivial(self):
        from src.bounds import variance_bound_rho
        from src.errors import CapacityTrivialError

        with pytest.raises(CapacityTrivialError):
            variance_bound_rho(_profile(beta=1.0), 100)

    def test_k_variance_bracket(self):
        """beta = 0.5, eta1 = 0.5: the inner bracket is about 5.1665."""
        from src.bounds import k_variance_constant, log_iterate_constant

        profile = _profile(theta=0.5, beta=0.5)
        c_kappa = log_iterate_constant(profile)
        bracket = (1 / (2 - math.sqrt(2))) ** 0.5 * 2 * 0.5 ** 1.5 + 6 * 0.5 ** 1.5 / 0.5
        assert bracket == pytest.approx(5.166521, abs=1e-5)
        expected = 0.25 * c_kappa + 2 * c_kappa * 1.5 * (0.5 / (2 * math.e)) ** 0.5 * bracket
        assert k_variance_constant(profile) == pytest.approx(expected, rel=1e-6)

    def test_k_variance_log_normalization(self):
        from src.bounds import k_variance_constant, variance_bound_K

        profile = _profile(theta=0.5, beta=0.5)
        value = variance_bound_K(profile, math.e).value
        assert value == pytest.approx(k_variance_constant(profile) * math.exp(-0.25))

    def test_k_variance_small_beta(self):
        from src.bounds import k_variance_constant
        from src.errors import InvalidParameterError

        with pytest.raises(InvalidParameterError):
            k_variance_constant(_profile(theta=0.5, beta=1e-4))

    def test_zero_k_variance(self):
        from src.bounds import variance_bound_K

        profile = _profile(theta=0.5, rho_norm_f=0.0, k_norm_f=0.0, noise_risk=0.0, M=0.0)
        assert variance_bound_K(profile, 100).value == 0.0


class TestRates:
    """Test the rate selector and the combined bounds."""

    def test_selector_second_branch(self):
        from src.bounds import rate_selector

        choice = rate_selector(1.0, 0.25)
        assert choice.theta_star == pytest.approx(0.636364, abs=1e-6)
        assert choice.rho_exponent == pytest.approx(0.636364, abs=1e-6)
        assert choice.k_exponent == pytest.approx(0.375)

    def test_selector_first_branch(self):
        from src.bounds import rate_selector

        assert rate_selector(0.6, 0.5).theta_star == pytest.approx(0.545455, abs=1e-6)

    def test_selector_boundary(self):
        """r = 1 - beta/2 sits on both branches."""
        from src.bounds import rate_selector

        assert rate_selector(0.75, 0.5).theta_star == pytest.approx(0.6)
        assert (2 - 0.5) / (3 - 0.5) == pytest.approx(0.6)

    def test_composition(self):
        """On the first branch the combined bound is bias plus variance."""
        from src.bounds import bias_bound_rho, rate_selector, theorem_bound, variance_bound_rho

        profile = _profile(r=0.6, beta=0.5, theta=rate_selector(0.6, 0.5).theta_star)
        for t in (3, 100, 10_000):
            total = bias_bound_rho(profile, t) + variance_bound_rho(profile, t).value
            assert theorem_bound(profile, t) == pytest.approx(total, rel=1e-9)

    def test_dominates_parts_second_branch(self):
        from src.bounds import bias_bound_rho, rate_selector, theorem_bound, variance_bound_rho

        profile = _profile(r=1.0, beta=0.3, theta=rate_selector(1.0, 0.3).theta_star)
        for t in (3, 100, 10_000):
            total = bias_bound_rho(profile, t) + variance_bound_rho(profile, t).value
            assert theorem_bound(profile, t) >= total * (1 - 1e-12)

    def test_doubling(self):
        from src.bounds import rate_selector, theorem_bound

        profile = _profile(r=1.0, beta=0.3, theta=rate_selector(1.0, 0.3).theta_star)
        ratio = theorem_bound(profile, 1000) / theorem_bound(profile, 2000)
        assert ratio == pytest.approx(2 ** profile.theta)

    def test_branch_mismatch(self):
        from src.bounds import theorem_bound
        from src.errors import BranchMismatchError

        with pytest.raises(BranchMismatchError):
            theorem_bound(_profile(theta=0.7), 100, "rho")
        with pytest.raises(BranchMismatchError):
            theorem_bound(_profile(theta=0.7), 100, "K")

    def test_k_bound_decreasing_on_grid(self):
        from src.bounds import theorem_bound

        profile = _profile(theta=0.5, beta=0.3)
        grid = [10 ** k for k in range(3, 9)]
        values = [theorem_bound(profile, t, "K") for t in grid]
        assert values == sorted(values, reverse=True)

    def test_trace_envelope(self):
        """Small tail sums hit the kappa cap; large ones decay like S^-(p-beta)."""
        from src.bounds import trace_envelope

        profile = _profile(beta=0.5, kappa_sq=0.9, eta1=0.5)
        cap = 1.5 * 0.9 ** 1.5
        assert trace_envelope(profile, 0.0, 2) == pytest.approx(cap)
        far = trace_envelope(profile, 1e6, 2)
        assert far == pytest.approx(1.5 * (1.5 / (2 * math.e)) ** 1.5 / 1e9)
