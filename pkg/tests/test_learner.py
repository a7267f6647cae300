"""
Tests for the online learner.
"""

import math

import numpy as np
import pytest


def _unit_problem(noise=0.0):
    """sigma = (1), f_rho = 1, so every label is y = 1 when noiseless."""
    from src.model import KernelModel, build_spectrum, make_data_model, make_target

    spectrum = build_spectrum("custom", 1, 1.0, [1.0])
    kernel = KernelModel.spectral(spectrum)
    return kernel, make_data_model(make_target(spectrum, 1.0, [1.0]), noise)


def _power_problem(n=32, kappa_sq_target=0.9, u_norm=1.0, noise=0.3):
    from src.model import (
        KernelModel,
        build_spectrum,
        make_data_model,
        make_source,
        make_target,
        scale_for_kappa_sq,
    )

    scale = scale_for_kappa_sq("power(0.5)", n, kappa_sq_target)
    spectrum = build_spectrum("power(0.5)", n, scale)
    target = make_target(spectrum, 1.0, make_source("decay", n, norm=u_norm))
    return KernelModel.spectral(spectrum), make_data_model(target, noise)


class TestSchedules:
    """Test step size and regularization schedules."""

    def test_poly_decay(self):
        from src.learner import StepSchedule, eta

        schedule = StepSchedule.poly_decay(0.5, 0.5)
        assert eta(schedule, 4) == pytest.approx(0.25)
        assert eta(schedule, 1) == 0.5

    def test_regularized(self):
        """a = 2, r = 1 at t = 8: eta = 0.5, lambda = 0.25."""
        from src.learner import StepSchedule, eta, lam

        schedule = StepSchedule.regularized(2.0, 1.0)
        assert eta(schedule, 8) == pytest.approx(0.5)
        assert lam(schedule, 8) == pytest.approx(0.25)
        assert eta(schedule, 1) == 2.0

    def test_lambda_zero_when_unregularized(self):
        from src.learner import StepSchedule, lam

        assert lam(StepSchedule.poly_decay(0.5, 0.6), 3) == 0.0
        assert lam(StepSchedule.regularized(2.0, 1.0, lambda_factor=0.0), 3) == 0.0

    def test_constant_horizon(self):
        from src.errors import StepIndexError
        from src.learner import StepSchedule, eta

        schedule = StepSchedule.constant_horizon(0.5, 8, 1.0)
        assert eta(schedule, 1) == pytest.approx(0.5 * 8 ** (-2.0 / 3.0))
        assert eta(schedule, 8) == eta(schedule, 1)
        with pytest.raises(StepIndexError):
            eta(schedule, 9)

    def test_step_zero(self):
        from src.errors import StepIndexError
        from src.learner import StepSchedule, eta, lam

        with pytest.raises(StepIndexError):
            eta(StepSchedule.poly_decay(0.5, 0.5), 0)
        with pytest.raises(StepIndexError):
            lam(StepSchedule.regularized(2.0, 1.0), 0)

    def test_contraction_enforced(self):
        """eta1 kappa^2 >= 1 is rejected."""
        from src.errors import InvalidParameterError
        from src.learner import StepSchedule

        with pytest.raises(InvalidParameterError):
            StepSchedule.poly_decay(1.2, 0.5, kappa_sq=0.9)
        with pytest.raises(InvalidParameterError):
            StepSchedule.poly_decay(0.5, 1.0)

    def test_regularized_needs_a_above_one(self):
        from src.errors import InvalidParameterError
        from src.learner import StepSchedule

        with pytest.raises(InvalidParameterError):
            StepSchedule.regularized(1.0, 1.0)


class TestSteps:
    """Test single updates."""

    def test_first_step(self):
        """f_1 = 0, y = 1, eta_1 = 0.5 gives f_2 = 0.5."""
        from src.learner import StepSchedule, new_state, predict, sgd_step

        kernel, _ = _unit_problem()
        state = new_state(kernel)
        sgd_step(state, StepSchedule.poly_decay(0.5, 0.5), (0.3, 1.0))
        assert state.step_index == 2
        assert predict(state, 0.9) == pytest.approx(0.5)

    def test_two_steps(self):
        from src.learner import StepSchedule, new_state, predict, sgd_step

        kernel, _ = _unit_problem()
        state = new_state(kernel)
        schedule = StepSchedule.poly_decay(0.5, 0.5)
        sgd_step(state, schedule, (0.3, 1.0))
        sgd_step(state, schedule, (0.7, 1.0))
        assert predict(state, 0.1) == pytest.approx(0.676777, abs=1e-6)

    def test_zero_residual(self):
        from src.learner import StepSchedule, new_state, sgd_step

        kernel, _ = _unit_problem()
        state = new_state(kernel)
        sgd_step(state, StepSchedule.poly_decay(0.5, 0.5), (0.3, 0.0))
        assert list(state.coefficients) == [0.0]

    def test_regularized_shrinks(self):
        """f_1 = 0.5, y = 0.5, eta_2 lambda_2 = 0.1 gives 0.45."""
        from src.learner import StepSchedule, new_state, regularized_step

        kernel, _ = _unit_problem()
        state = new_state(kernel, algorithm="regularized")
        state.step_index = 1
        state.coefficients = np.array([0.5])
        regularized_step(state, StepSchedule.regularized(2.0, 1.0, lambda_factor=0.2), (0.4, 0.5))
        assert state.step_index == 2
        assert state.coefficients[0] == pytest.approx(0.45)

    def test_regularized_first_step_matches_sgd(self):
        """Shrinking the zero function does nothing, even with eta_1 lambda_1 = 1."""
        from src.learner import StepSchedule, new_state, regularized_step, sgd_step

        kernel, _ = _power_problem(n=8, kappa_sq_target=0.4)
        plain = new_state(kernel)
        reg = new_state(kernel, algorithm="regularized")
        sgd_step(plain, StepSchedule.poly_decay(2.0, 2.0 / 3.0), (0.25, 0.8))
        regularized_step(reg, StepSchedule.regularized(2.0, 1.0), (0.25, 0.8))
        assert np.array_equal(plain.coefficients, reg.coefficients)

    def test_dual_scale_renormalized(self):
        """A lazy scale pushed below the floor is folded back into the weights."""
        from src.learner import StepSchedule, new_state, predict, regularized_step

        kernel, _ = _power_problem(n=8, kappa_sq_target=0.4)
        schedule = StepSchedule.regularized(2.0, 1.0)
        state = new_state(kernel, representation="dual", algorithm="regularized")
        for sample in ((0.1, 0.5), (0.6, -0.2), (0.85, 0.3)):
            regularized_step(state, schedule, sample)

        tiny = state.copy()
        tiny.global_scale = 1.2e-300
        tiny.atom_weights = state.effective_weights() / 1.2e-300
        xs = np.linspace(0.0, 1.0, 7)
        assert predict(tiny, xs) == pytest.approx(predict(state, xs), rel=1e-9, abs=1e-12)

        regularized_step(state, schedule, (0.3, 0.4))
        regularized_step(tiny, schedule, (0.3, 0.4))
        assert tiny.global_scale == 1.0
        assert np.all(np.isfinite(tiny.atom_weights[: tiny.atom_count]))
        assert predict(tiny, xs) == pytest.approx(predict(state, xs), rel=1e-9, abs=1e-12)

    def test_contraction_violation(self):
        from src.errors import ContractionViolationError
        from src.learner import StepSchedule, new_state, regularized_step

        kernel, _ = _unit_problem()
        state = new_state(kernel, algorithm="regularized")
        state.coefficients = np.array([0.5])
        with pytest.raises(ContractionViolationError):
            regularized_step(state, StepSchedule.regularized(2.0, 1.0), (0.4, 0.5))


class TestPredict:
    """Test evaluation of primal and dual iterates."""

    def test_empty_state(self):
        from src.learner import new_state, predict

        kernel, _ = _power_problem(n=4)
        assert predict(new_state(kernel), 0.2) == 0.0
        assert predict(new_state(kernel, "dual"), 0.2) == 0.0

    def test_single_atom(self):
        """One dual atom of weight 0.5 at a point with K(x, x) = 1."""
        from src.learner import StepSchedule, new_state, predict, sgd_step

        kernel, _ = _unit_problem()
        state = new_state(kernel, "dual")
        sgd_step(state, StepSchedule.poly_decay(0.5, 0.5), (0.3, 1.0))
        assert state.atom_count == 1
        assert state.atom_weights[0] == pytest.approx(0.5)
        assert predict(state, 0.3) == pytest.approx(0.5)

    def test_primal_coefficients(self):
        from src.learner import new_state, predict
        from src.model import KernelModel, build_spectrum

        kernel = KernelModel.spectral(build_spectrum("custom", 2, 1.0, [1.0, 0.25]))
        state = new_state(kernel)
        state.coefficients = np.array([0.5, 0.1])
        assert predict(state, 0.0) == pytest.approx(0.641421, abs=1e-6)

    def test_closed_form_needs_dual(self):
        from src.errors import InvalidParameterError
        from src.learner import new_state
        from src.model import KernelModel

        with pytest.raises(InvalidParameterError):
            new_state(KernelModel.gaussian(0.5), "primal")

    def test_gaussian_dual(self):
        """Closed-form kernels evaluate through the Gram matrix."""
        from src.learner import StepSchedule, new_state, predict, sgd_step
        from src.model import KernelModel

        state = new_state(KernelModel.gaussian(0.5, dim=2), "dual")
        sgd_step(state, StepSchedule.poly_decay(0.5, 0.5), (np.array([0.2, 0.4]), 1.0))
        assert predict(state, np.array([0.2, 0.4])) == pytest.approx(0.5)
        assert predict(state, np.array([0.7, 0.4])) == pytest.approx(0.5 * math.exp(-0.25 / 0.5))


class TestRunStream:
    """Test whole runs."""

    def test_no_steps(self):
        from src.learner import StepSchedule, run_stream

        kernel, data = _power_problem(n=4)
        trajectory = run_stream(data, kernel, StepSchedule.poly_decay(0.5, 0.5), "last", 0, [1], seed=0)
        assert len(trajectory.snapshots) == 1
        assert trajectory.snapshots[0].t == 0
        assert not np.any(trajectory.snapshots[0].state.coefficients)

    def test_hand_recursion(self):
        from src.learner import StepSchedule, run_stream

        kernel, data = _unit_problem()
        trajectory = run_stream(data, kernel, StepSchedule.poly_decay(0.5, 0.5), "last", 2, [1, 2, 3], seed=5)
        values = [s.state.coefficients[0] for s in trajectory.snapshots]
        assert values == pytest.approx([0.0, 0.5, 0.676777], abs=1e-6)

    def test_average_of_three(self):
        """Iterates 0, 0.5, 0.676777 average to 0.392259."""
        from src.learner import StepSchedule, run_stream

        kernel, data = _unit_problem()
        trajectory = run_stream(data, kernel, StepSchedule.poly_decay(0.5, 0.5), "averaged", 2, [2, 3], seed=5)
        assert trajectory.snapshots[0].state.average[0] == pytest.approx(0.25)
        assert trajectory.snapshots[1].state.average[0] == pytest.approx(0.392259, abs=1e-6)

    def test_average_matches_mean_of_iterates(self):
        from src.learner import StepSchedule, run_stream

        kernel, data = _power_problem(n=16)
        schedule = StepSchedule.poly_decay(0.5, 0.6)
        T = 30
        iterates = run_stream(data, kernel, schedule, "last", T, list(range(1, T + 2)), seed=3)
        averaged = run_stream(data, kernel, schedule, "averaged", T, [T + 1], seed=3)
        mean = np.mean([s.state.coefficients for s in iterates.snapshots], axis=0)
        assert np.max(np.abs(averaged.snapshots[0].state.average - mean)) < 1e-12

    def test_deterministic(self):
        from src.learner import StepSchedule, run_stream

        kernel, data = _power_problem(n=16)
        schedule = StepSchedule.poly_decay(0.5, 0.5)
        a = run_stream(data, kernel, schedule, "last", 200, [101, 201], seed=11)
        b = run_stream(data, kernel, schedule, "last", 200, [101, 201], seed=11)
        for x, y in zip(a.snapshots, b.snapshots):
            assert np.array_equal(x.state.coefficients, y.state.coefficients)

    @pytest.mark.parametrize("algorithm", ["last", "averaged"])
    def test_primal_dual_agree(self, algorithm):
        """Dual expansion and eigen-coefficients give the same function."""
        from src.learner import StepSchedule, predict, run_stream

        kernel, data = _power_problem(n=32)
        schedule = StepSchedule.poly_decay(0.5, 0.5)
        use_average = algorithm == "averaged"
        primal = run_stream(data, kernel, schedule, algorithm, 500, [51, 501], seed=2)
        dual = run_stream(data, kernel, schedule, algorithm, 500, [51, 501], seed=2, representation="dual")
        probes = np.random.Generator(np.random.PCG64(9)).random(100)
        for p, d in zip(primal.snapshots, dual.snapshots):
            a = predict(p.state, probes, use_average)
            b = predict(d.state, probes, use_average)
            assert np.max(np.abs(a - b)) <= 1e-8 * np.max(np.abs(a))

    def test_regularized_primal_dual_agree(self):
        from src.learner import StepSchedule, predict, run_stream

        kernel, data = _power_problem(n=16, kappa_sq_target=0.4)
        schedule = StepSchedule.regularized(2.0, 1.0)
        primal = run_stream(data, kernel, schedule, "regularized", 300, [301], seed=4)
        dual = run_stream(data, kernel, schedule, "regularized", 300, [301], seed=4, representation="dual")
        probes = np.linspace(0.0, 1.0, 50)
        a = predict(primal.snapshots[0].state, probes)
        b = predict(dual.snapshots[0].state, probes)
        assert np.max(np.abs(a - b)) <= 1e-8 * np.max(np.abs(a))

    def test_unpenalized_regularized_reproduces_sgd(self):
        """lambda = 0 gives the plain recursion bit for bit."""
        from src.learner import StepSchedule, run_stream

        kernel, data = _power_problem(n=16, kappa_sq_target=0.4)
        plain = run_stream(data, kernel, StepSchedule.poly_decay(2.0, 2.0 / 3.0), "last", 400,
                           [101, 401], seed=8)
        reg = run_stream(data, kernel, StepSchedule.regularized(2.0, 1.0, lambda_factor=0.0), "regularized",
                         400, [101, 401], seed=8)
        for p, r in zip(plain.snapshots, reg.snapshots):
            assert np.array_equal(p.state.coefficients, r.state.coefficients)

    def test_linear_in_labels(self):
        """Doubling the target and the noise doubles every coefficient."""
        from src.learner import StepSchedule, run_stream

        kernel, single = _power_problem(n=16, u_norm=1.0, noise=0.3)
        _, double = _power_problem(n=16, u_norm=2.0, noise=0.6)
        schedule = StepSchedule.poly_decay(0.5, 0.5)
        a = run_stream(single, kernel, schedule, "last", 100, [101], seed=1).snapshots[0].state.coefficients
        b = run_stream(double, kernel, schedule, "last", 100, [101], seed=1).snapshots[0].state.coefficients
        assert np.allclose(2.0 * a, b, rtol=1e-12, atol=1e-15)

    def test_norm_tracking(self):
        from src.learner import StepSchedule, k_norm_sq, run_stream

        kernel, data = _power_problem(n=16)
        trajectory = run_stream(data, kernel, StepSchedule.poly_decay(0.5, 0.5), "last", 50, [51], seed=1,
                                track_norms=True)
        assert trajectory.k_norms.shape == (51,)
        assert trajectory.k_norms[0] == 0.0
        assert trajectory.k_norms[50] == pytest.approx(k_norm_sq(trajectory.snapshots[0].state))

    def test_bad_checkpoints(self):
        from src.errors import InputError
        from src.learner import StepSchedule, run_stream

        kernel, data = _power_problem(n=4)
        schedule = StepSchedule.poly_decay(0.5, 0.5)
        with pytest.raises(InputError):
            run_stream(data, kernel, schedule, "last", 10, [5, 3], seed=0)
        with pytest.raises(InputError):
            run_stream(data, kernel, schedule, "last", 10, [12], seed=0)

    def test_contraction_checked_against_kernel(self):
        from src.errors import InvalidParameterError
        from src.learner import StepSchedule, run_stream

        kernel, data = _power_problem(n=4, kappa_sq_target=0.9)
        with pytest.raises(InvalidParameterError):
            run_stream(data, kernel, StepSchedule.poly_decay(1.5, 0.5), "last", 10, [11], seed=0)

    def test_to_primal_of_dual(self):
        from src.learner import StepSchedule, run_stream, to_primal

        kernel, data = _power_problem(n=8)
        schedule = StepSchedule.poly_decay(0.5, 0.5)
        primal = run_stream(data, kernel, schedule, "last", 40, [41], seed=6).snapshots[0].state
        dual = run_stream(data, kernel, schedule, "last", 40, [41], seed=6, representation="dual").snapshots[0].state
        assert np.allclose(to_primal(dual), primal.coefficients, rtol=1e-10, atol=1e-12)
