import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from perioddrift.errors import DomainError, UnsupportedOperationError
from perioddrift.signal import (
    JumpFunctional,
    PiecewiseSignal,
    SmoothSignal,
    box_signal,
    bump_signal,
    counting_function,
    disjoint_threshold,
    eval_jump_functional,
    eval_signal,
    eval_theta_derivative,
    jump_difference,
    make_signal,
    scaled,
    sine_signal,
    steps_signal,
    support_intervals,
)
from perioddrift.errors import ConfigError


def _brute_count(r, t):
    return sum(1 for k in range(int(t) + 3) if k + r <= t)


class TestEvalSignal:
    def test_zero_signal(self):
        sig = sine_signal(0.0)
        assert eval_signal(sig, 2.7, 1.3) == 0.0

    def test_box_interior(self):
        assert eval_signal(box_signal(0.25, 0.75), 1.0, 0.5) == 1.0

    def test_box_outside(self):
        sig = box_signal(0.25, 0.75)
        assert eval_signal(sig, 1.0, 0.1) == 0.0
        assert eval_signal(sig, 1.0, 0.9) == 0.0
        assert eval_signal(sig, 1.0, 3.5) == 1.0

    def test_sin_direct(self):
        assert abs(eval_signal(sine_signal(), 2.0, 1.0)) < 1e-15

    def test_nonpositive_theta(self):
        with pytest.raises(DomainError):
            eval_signal(sine_signal(), 0.0, 1.0)
        with pytest.raises(DomainError):
            eval_signal(box_signal(0.2, 0.4), -1.0, 1.0)

    @settings(max_examples=60, deadline=None)
    @given(theta=st.floats(0.2, 5.0), t=st.floats(0.0, 50.0))
    def test_periodicity(self, theta, t):
        for sig in (sine_signal(), bump_signal(0.3)):
            assert eval_signal(sig, theta, t + theta) == pytest.approx(eval_signal(sig, theta, t), abs=1e-9)
        box = box_signal(0.25, 0.75)
        u = (t / theta) % 1.0
        assume(min(abs(u - 0.25), abs(u - 0.75), u, 1 - u) > 1e-6)
        assert eval_signal(box, theta, t + theta) == eval_signal(box, theta, t)

    def test_vectorised(self):
        t = np.linspace(0, 3, 7)
        out = eval_signal(sine_signal(), 1.5, t)
        np.testing.assert_allclose(out, np.sin(2 * np.pi * t / 1.5), atol=1e-15)


class TestThetaDerivative:
    def test_zero_at_origin(self):
        assert eval_theta_derivative(sine_signal(), 1.7, 0.0) == 0.0

    def test_sin_quarter(self):
        assert abs(eval_theta_derivative(sine_signal(), 1.0, 0.25)) < 1e-14

    @settings(max_examples=50, deadline=None)
    @given(theta=st.floats(0.8, 2.0), t=st.floats(0.0, 2.0))
    def test_central_difference(self, theta, t):
        eps = 1e-5
        sig = sine_signal()
        fd = (eval_signal(sig, theta + eps, t) - eval_signal(sig, theta - eps, t)) / (2 * eps)
        assert abs(fd - eval_theta_derivative(sig, theta, t)) <= 1e-6

    @settings(max_examples=50, deadline=None)
    @given(theta=st.floats(0.5, 3.0), t=st.floats(0.0, 10.0))
    def test_central_difference_bump(self, theta, t):
        # truncation error eps^2/6 * third theta-derivative, which scales like (t/theta^2)^3 / width^3
        eps = 1e-6
        sig = bump_signal(0.25)
        fd = (eval_signal(sig, theta + eps, t) - eval_signal(sig, theta - eps, t)) / (2 * eps)
        tol = 1e-7 * (1 + t / theta**2) ** 3 * sig.bound
        assert abs(fd - eval_theta_derivative(sig, theta, t)) <= tol

    def test_piecewise_unsupported(self):
        with pytest.raises(UnsupportedOperationError):
            eval_theta_derivative(box_signal(0.2, 0.6), 1.0, 0.3)


class TestSmoothShapes:
    @pytest.mark.parametrize("sig", [sine_signal(), bump_signal(0.25), bump_signal(0.4, 2.0)])
    def test_derivatives_finite_difference(self, sig):
        u = np.linspace(0.0, 3.0, 301)
        eps = 1e-6
        fd1 = (sig.s0(u + eps) - sig.s0(u - eps)) / (2 * eps)
        fd2 = (sig.s0_prime(u + eps) - sig.s0_prime(u - eps)) / (2 * eps)
        np.testing.assert_allclose(fd1, sig.s0_prime(u), atol=1e-6 * sig.bound)
        np.testing.assert_allclose(fd2, sig.s0_second(u), atol=1e-5 * sig.bound)

    @pytest.mark.parametrize("sig", [sine_signal(), bump_signal(0.25)])
    def test_one_periodic(self, sig):
        u = np.linspace(0.0, 1.0, 97)
        for fn in (sig.s0, sig.s0_prime, sig.s0_second):
            np.testing.assert_allclose(fn(u + 1.0), fn(u), atol=1e-9)

    @pytest.mark.parametrize("sig", [sine_signal(), bump_signal(0.25)])
    def test_bound_dominates(self, sig):
        u = np.linspace(0.0, 1.0, 10001)
        for fn in (sig.s0, sig.s0_prime, sig.s0_second):
            assert np.max(np.abs(fn(u))) <= sig.bound * (1 + 1e-12)

    def test_bad_bound(self):
        with pytest.raises(ValueError):
            SmoothSignal(np.sin, np.cos, np.sin, bound=0.0)


class TestCountingFunction:
    def test_before_first(self):
        sig = PiecewiseSignal((0.5,), (1.0,))
        assert counting_function(sig, 1, 0.49) == 0

    def test_examples(self):
        sig = PiecewiseSignal((0.5,), (1.0,))
        assert counting_function(sig, 1, 2.5) == 3
        assert counting_function(sig, 1, 2.49) == 2

    def test_bad_index(self):
        with pytest.raises(IndexError):
            counting_function(PiecewiseSignal((0.5,), (1.0,)), 2, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(r=st.floats(0.01, 1.0), t=st.floats(0.0, 40.0))
    def test_matches_enumeration(self, r, t):
        frac = (t - r) - math.floor(t - r)
        assume(min(frac, 1 - frac) > 1e-9)
        sig = PiecewiseSignal((r,), (1.0,))
        assert counting_function(sig, 1, t) == _brute_count(r, t)


class TestPiecewiseSignal:
    def test_invalid(self):
        with pytest.raises(ValueError):
            PiecewiseSignal((0.5, 0.3), (1.0, 1.0))
        with pytest.raises(ValueError):
            PiecewiseSignal((0.0,), (1.0,))
        with pytest.raises(ValueError):
            PiecewiseSignal((0.5,), (0.0,))
        with pytest.raises(ValueError):
            PiecewiseSignal((), ())

    def test_box_decomposition(self):
        # declared S0: indicator of [r1, r2) continued periodically
        sig = box_signal(0.2, 0.7)
        u = np.linspace(0.0, 5.0, 5003)
        frac = u % 1.0
        declared = ((frac >= 0.2) & (frac < 0.7)).astype(float)
        away = np.minimum(np.abs(frac - 0.2), np.abs(frac - 0.7)) > 1e-9
        np.testing.assert_allclose(sig.value(u)[away], declared[away], atol=1e-12)

    def test_steps_decomposition(self):
        # declared S0: c + sum_j rho_j * (N_j(t) - t), checked through its periodic form
        r, rho, c = (0.3, 0.8), (2.0, 0.5), 0.25
        sig = steps_signal(r, rho, c)
        u = np.linspace(0.0, 4.0, 4001)
        frac = u % 1.0
        declared = c + sum(p * ((frac >= rj).astype(float) - frac) for rj, p in zip(r, rho))
        away = np.min([np.abs(frac - rj) for rj in r], axis=0) > 1e-9
        np.testing.assert_allclose(sig.value(u)[away], declared[away], atol=1e-12)

    def test_continuous_part_lipschitz(self):
        sig = steps_signal((0.3, 0.8), (2.0, 0.5), 0.1)
        s, t = np.random.default_rng(3).uniform(0, 10, (2, 500))
        lhs = np.abs(sig.continuous_value(s) - sig.continuous_value(t))
        assert np.all(lhs <= sig.lipschitz_const * np.abs(s - t) + 1e-12)

    def test_jump_points(self):
        locs, heights = box_signal(0.25, 0.75).jump_points(2.0, 5.0)
        np.testing.assert_allclose(locs, [0.5, 1.5, 2.5, 3.5, 4.5])
        np.testing.assert_allclose(heights, [1, -1, 1, -1, 1])

    def test_min_gap(self):
        assert box_signal(0.25, 0.9).min_gap() == pytest.approx(0.35)

    def test_scaled(self):
        sig = scaled(box_signal(0.25, 0.75), 3.0)
        assert eval_signal(sig, 1.0, 0.5) == 3.0
        assert eval_signal(scaled(sine_signal(), 2.0), 1.0, 0.25) == pytest.approx(2.0)


class TestJumpFunctional:
    def test_zero_h(self):
        jf = JumpFunctional(1.0, 0.0, 10, box_signal(0.25, 0.75))
        np.testing.assert_array_equal(jf(np.linspace(0, 5, 11)), 0.0)

    def test_single_jump_example(self):
        sig = PiecewiseSignal((0.5,), (1.0,))
        jf = JumpFunctional(1.0, -1.0, 10, sig)
        for k in range(5):
            a, b = 0.99 * (k + 0.5), k + 0.5
            assert jf(a) == 1.0
            assert jf(0.5 * (a + b)) == 1.0
            assert jf(a - 1e-6) == 0.0
            assert jf(b + 1e-6) == 0.0
            # right endpoint: N(s/theta) already counts the jump, so the value drops
            assert jf(b) == 0.0

    def test_positive_h_nonnegative(self):
        sig = PiecewiseSignal((0.5,), (1.0,))
        jf = JumpFunctional(1.0, 1.0, 10, sig)
        s = np.linspace(0, 5, 20001)
        assert np.all(jf(s) >= 0)
        assert jf(0.5 * (0.5 + 1.01 * 0.5)) == 1.0

    def test_value_at_zero(self):
        jf = JumpFunctional(1.3, -2.0, 7, box_signal(0.1, 0.5))
        assert jf(0.0) == 0.0

    def test_domain(self):
        with pytest.raises(DomainError):
            JumpFunctional(1.0, -200.0, 10, box_signal(0.2, 0.4))
        with pytest.raises(DomainError):
            JumpFunctional(1.0, 1.0, 0.5, box_signal(0.2, 0.4))
        with pytest.raises(DomainError):
            eval_jump_functional(JumpFunctional(1.0, 1.0, 5, box_signal(0.2, 0.4)), -1.0)

    def test_sign_orthogonality(self):
        sig = box_signal(0.25, 0.75)
        n = 50
        jm, jp = JumpFunctional(1.0, -1.0, n, sig), JumpFunctional(1.0, 1.0, n, sig)
        s = np.linspace(0, n, 400001)
        assert np.all(jm(s) * jp(s) == 0.0)

    def test_jump_difference_signs(self):
        sig = PiecewiseSignal((0.5,), (1.0,))
        assert jump_difference(sig, 0.99, 1.0, 0.497) == 1.0
        assert jump_difference(sig, 1.01, 1.0, 0.503) == -1.0
        assert jump_difference(sig, 1.0, 1.0, 0.5) == 0.0


class TestSupportIntervals:
    def test_zero_h(self):
        assert len(support_intervals(JumpFunctional(1.0, 0.0, 10, box_signal(0.2, 0.4)), 5.0)) == 0

    def test_example(self):
        sig = PiecewiseSignal((0.5,), (1.0,))
        si = support_intervals(JumpFunctional(1.0, -1.0, 10, sig), 3.0)
        np.testing.assert_allclose(si.left, [0.495, 1.485, 2.475], rtol=1e-14)
        np.testing.assert_allclose(si.right, [0.5, 1.5, 2.5], rtol=1e-14)
        np.testing.assert_array_equal(si.value, 1.0)
        assert not si.overlap

    def test_nesting(self):
        sig = PiecewiseSignal((0.5,), (1.0,))
        a = support_intervals(JumpFunctional(1.0, -1.0, 10, sig), 3.0)
        b = support_intervals(JumpFunctional(1.0, -0.5, 10, sig), 3.0)
        assert len(a) == len(b)
        assert np.all(b.left >= a.left) and np.all(b.right <= a.right)

    def test_overlap_flag_small_n(self):
        sig = box_signal(0.25, 0.3)
        assert support_intervals(JumpFunctional(1.0, -1.0, 2, sig), 40.0).overlap

    def test_intervals_reproduce_functional(self):
        sig = steps_signal((0.2, 0.55, 0.9), (1.5, -0.7, 2.0))
        jf = JumpFunctional(1.2, 1.3, 30, sig)
        si = support_intervals(jf, 30.0)
        assert not si.overlap
        s = np.random.default_rng(0).uniform(0, 29, 20000)
        expected = np.zeros_like(s)
        for a, b, v in si.intervals:
            expected += np.where((s >= a) & (s < b), v, 0.0)
        np.testing.assert_array_equal(jf(s), expected)


class TestDisjointThreshold:
    @pytest.mark.parametrize("d,t0,theta", [(1.0, 1.0, 1.0), (2.0, 1.0, 0.7), (0.5, 3.0, 2.0)])
    def test_definition(self, d, t0, theta):
        sig = box_signal(0.25, 0.75)
        n = disjoint_threshold(sig, theta, d, t0)
        half_gap = theta * sig.min_gap() / 2
        assert d * (t0 * n / theta + 1) / n**2 < half_gap
        if n > 1:
            assert not d * (t0 * (n - 1) / theta + 1) / (n - 1) ** 2 < half_gap

    def test_no_overlap_at_threshold(self):
        sig = box_signal(0.25, 0.75)
        n = disjoint_threshold(sig, 1.0, 2.0, 1.0)
        for h in (-2.0, 2.0):
            assert not support_intervals(JumpFunctional(1.0, h, n, sig), float(n)).overlap


class TestCatalog:
    def test_names(self):
        assert isinstance(make_signal("sin"), SmoothSignal)
        assert isinstance(make_signal("bump"), SmoothSignal)
        assert isinstance(make_signal("box(0.25,0.75)"), PiecewiseSignal)
        sig = make_signal("steps(0.3,0.6;1,-2;0.5)")
        assert sig.jump_times == (0.3, 0.6) and sig.jump_heights == (1.0, -2.0)

    def test_dict_form(self):
        sig = make_signal({"id": "sin", "amplitude": 3.0})
        assert eval_signal(sig, 1.0, 0.25) == pytest.approx(3.0)

    @pytest.mark.parametrize("bad", ["cosine", "box(0.5)", "box(0.8,0.2)", "steps(0.5)", "sin("])
    def test_unknown(self, bad):
        with pytest.raises(ConfigError):
            make_signal(bad)
