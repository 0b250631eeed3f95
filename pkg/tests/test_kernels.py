import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volatrend.errors import DomainError, ValidationError
from volatrend.kernels import (
    ProxParams,
    conjugate_augmented,
    conjugate_single,
    conjugate_single_grad_hess,
    lambert_w,
    lambert_w_exp,
    prox_variance_nll,
    soft_threshold,
)

from conftest import golden_section_min


def bisect_lambert(x, lo=0.0, hi=None):
    """Independent root of w*exp(w) = x by bisection."""
    if hi is None:
        hi = max(1.0, math.log(x) if x > 1 else 1.0) + 1.0
    f = lambda w: w + math.log(w) - math.log(x) if x > 0 else None
    a, b = 1e-300, hi
    for _ in range(200):
        m = 0.5 * (a + b)
        if f(m) > 0:
            b = m
        else:
            a = m
    return 0.5 * (a + b)


class TestLambertW:
    def test_zero(self):
        assert lambert_w(0.0) == 0.0

    def test_e_maps_to_one(self):
        assert lambert_w(np.e) == pytest.approx(1.0, abs=1e-14)

    def test_ten_against_bisection(self):
        w = lambert_w(10.0)
        assert w == pytest.approx(bisect_lambert(10.0), abs=1e-10)
        assert abs(w * np.exp(w) - 10.0) <= 1e-12 * 10.0

    def test_identity_residual_log_spaced(self):
        xs = np.concatenate([[0.0], np.logspace(-8, 10, 50)])
        w = lambert_w(xs)
        resid = np.abs(w * np.exp(w) - xs)
        assert np.all(resid <= 1e-12 * np.maximum(1.0, xs))

    def test_monotone(self):
        xs = np.logspace(-6, 8, 200)
        w = lambert_w(xs)
        assert np.all(np.diff(w) > 0)

    def test_negative_branch_segment(self):
        xs = np.linspace(-1 / np.e + 1e-9, -1e-6, 25)
        w = lambert_w(xs)
        assert np.all(np.abs(w * np.exp(w) - xs) <= 1e-12)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            lambert_w(-0.5)


class TestLambertWExp:
    @pytest.mark.parametrize("v", [-800.0, -37.5, -20.0, 0.0, 2.5, 3.0, 30.0, 700.0, 1e6])
    def test_log_identity(self, v):
        w = lambert_w_exp(v)
        if v <= -37.0:
            assert w == np.exp(v)
        else:
            assert abs(w + math.log(w) - v) <= 1e-11 * max(1.0, abs(v))

    def test_neg_inf_maps_to_zero(self):
        assert lambert_w_exp(float("-inf")) == 0.0

    def test_vector_residuals(self, rng):
        v = rng.uniform(-36, 36, 5000)
        w = lambert_w_exp(v)
        assert np.all(np.abs(w * np.exp(w - v) - 1.0) <= 1e-13)

    def test_agrees_with_lambert_w(self, rng):
        x = np.exp(rng.uniform(-10, 10, 100))
        assert np.allclose(lambert_w_exp(np.log(x)), lambert_w(x), rtol=1e-12)


class TestSoftThreshold:
    def test_definition_cases(self):
        assert np.allclose(soft_threshold([3.0, -0.5], [1.0, 1.0]), [2.0, 0.0])

    def test_zero_alpha_is_identity(self, rng):
        u = rng.standard_normal(50)
        assert np.array_equal(soft_threshold(u, np.zeros(50)), u)

    def test_negative_input(self):
        assert soft_threshold(np.array([-4.0]), np.array([1.5]))[0] == pytest.approx(-2.5)

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValidationError):
            soft_threshold(np.ones(3), np.array([1.0, -0.1, 0.0]))

    @pytest.mark.parametrize("u,alpha", [(2.3, 0.7), (-1.1, 0.4), (0.2, 0.5), (5.0, 0.0)])
    def test_prox_property_by_grid_search(self, u, alpha):
        grid = np.linspace(-8, 8, 160001)
        objective = alpha * np.abs(grid) + 0.5 * (grid - u) ** 2
        best = grid[np.argmin(objective)]
        out = float(soft_threshold(np.array([u]), np.array([alpha]))[0])
        assert out == pytest.approx(best, abs=1e-4)


class TestProxVarianceNll:
    def test_zero_observation_shifts_by_alpha(self):
        assert prox_variance_nll(5.0, ProxParams(alpha=1.0, y_sq=0.0)) == pytest.approx(4.0)

    def test_matches_golden_section(self):
        # value-only minimizers resolve the argmin to about sqrt(eps)
        alpha, y_sq, u = 0.5, 4.0, 0.0
        out = prox_variance_nll(u, ProxParams(alpha=alpha, y_sq=y_sq))
        oracle = golden_section_min(
            lambda x: alpha * (x + y_sq * math.exp(-x)) + 0.5 * (x - u) ** 2, -30, 30
        )
        assert out == pytest.approx(oracle, abs=5e-8)

    @given(
        st.floats(-30, 30),
        st.floats(1e-3, 10.0),
        st.floats(0.0, 50.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_stationarity_residual(self, u, alpha, y_sq):
        x = prox_variance_nll(u, ProxParams(alpha=alpha, y_sq=y_sq))
        resid = alpha * (1.0 - y_sq * math.exp(-x)) + (x - u)
        assert abs(resid) <= 1e-10 * max(1.0, abs(u), alpha)

    @given(
        st.floats(-20, 20),
        st.floats(-20, 20),
        st.floats(1e-2, 5.0),
        st.floats(0.0, 30.0),
    )
    @settings(max_examples=150, deadline=None)
    def test_firmly_nonexpansive(self, u1, u2, alpha, y_sq):
        p = ProxParams(alpha=alpha, y_sq=y_sq)
        x1 = prox_variance_nll(u1, p)
        x2 = prox_variance_nll(u2, p)
        assert abs(x1 - x2) <= abs(u1 - u2) + 1e-12

    def test_very_negative_u_no_overflow(self):
        out = prox_variance_nll(-5000.0, ProxParams(alpha=0.1, y_sq=2.0))
        assert np.isfinite(out)

    def test_invalid_params(self):
        with pytest.raises(ValidationError):
            ProxParams(alpha=0.0, y_sq=1.0)
        with pytest.raises(ValidationError):
            ProxParams(alpha=1.0, y_sq=-1.0)


def conjugate_oracle_1d(u, y_sq):
    """max over x of u*x - x - y_sq*exp(-x), by golden section."""
    return -golden_section_min(
        lambda x: -(u * x - x - y_sq * math.exp(-x)), -60, 60, tol=1e-13
    )


class TestConjugateSingle:
    def test_value_at_zero_y_sq_four(self):
        val = conjugate_single(np.zeros(1), np.array([2.0]))
        assert val == pytest.approx(-math.log(4.0) - 1.0)

    def test_value_at_zero_unit_y(self):
        assert conjugate_single(np.zeros(1), np.ones(1)) == pytest.approx(-1.0)

    def test_matches_numeric_maximization(self, rng):
        for _ in range(25):
            u = rng.uniform(-2.0, 0.9)
            y = rng.uniform(0.3, 3.0)
            val = conjugate_single(np.array([u]), np.array([y]))
            x_star = golden_section_min(
                lambda x: -(u * x - x - y**2 * math.exp(-x)), -60, 60, tol=1e-13
            )
            oracle = u * x_star - x_star - y**2 * math.exp(-x_star)
            assert val == pytest.approx(oracle, abs=1e-6)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            conjugate_single(np.array([1.0]), np.ones(1))
        with pytest.raises(DomainError):
            conjugate_single(np.zeros(1), np.zeros(1))


class TestConjugateSingleGradHess:
    def test_unit_point(self):
        g, h = conjugate_single_grad_hess(np.zeros(3), np.ones(3))
        assert np.allclose(g, 0.0)
        assert np.allclose(h, 1.0)

    def test_finite_differences(self, rng):
        for _ in range(100):
            u = rng.uniform(-2.0, 0.9, 4)
            y = rng.uniform(0.2, 3.0, 4)
            g, h = conjugate_single_grad_hess(u, y)
            d = 1e-6
            for j in range(4):
                up, um = u.copy(), u.copy()
                up[j] += d
                um[j] -= d
                fd_g = (conjugate_single(up, y) - conjugate_single(um, y)) / (2 * d)
                assert g[j] == pytest.approx(fd_g, rel=1e-5, abs=1e-5)
                gp, _ = conjugate_single_grad_hess(up, y)
                gm, _ = conjugate_single_grad_hess(um, y)
                assert h[j] == pytest.approx((gp[j] - gm[j]) / (2 * d), rel=1e-4, abs=1e-4)

    def test_gradient_blows_up_at_barrier(self):
        y = np.ones(1)
        grads = [
            conjugate_single_grad_hess(np.array([1.0 - 10.0**-k]), y)[0][0]
            for k in range(2, 9)
        ]
        assert all(b > a for a, b in zip(grads, grads[1:]))


class TestConjugateAugmented:
    def test_quadratic_case_closed_form(self, rng):
        # y = 0 leaves a linear-plus-quadratic whose conjugate is explicit
        rho = 2.0
        xi = rng.standard_normal(5)
        z = rng.standard_normal(5)
        u = rng.standard_normal(5)
        a = z - u
        val, grad, hess = conjugate_augmented(xi, np.zeros(5), z, u, rho)
        expected_val = float(np.sum((xi - 1) * a + (xi - 1) ** 2 / (2 * rho)))
        expected_x = a + (xi - 1) / rho
        assert val == pytest.approx(expected_val, rel=1e-12, abs=1e-12)
        assert np.allclose(grad, expected_x)
        assert np.allclose(hess, 1.0 / rho)

    def test_gradient_finite_differences(self, rng):
        rho = 1.3
        for _ in range(100):
            xi = rng.uniform(-3, 3, 3)
            y = rng.uniform(0.0, 2.0, 3)
            z = rng.standard_normal(3)
            u = rng.standard_normal(3)
            val, grad, _ = conjugate_augmented(xi, y, z, u, rho)
            d = 1e-6
            for j in range(3):
                xp, xm = xi.copy(), xi.copy()
                xp[j] += d
                xm[j] -= d
                vp = conjugate_augmented(xp, y, z, u, rho)[0]
                vm = conjugate_augmented(xm, y, z, u, rho)[0]
                assert grad[j] == pytest.approx((vp - vm) / (2 * d), rel=1e-5, abs=1e-5)

    def test_hessian_finite_differences(self, rng):
        rho = 0.8
        for _ in range(100):
            xi = rng.uniform(-3, 3, 2)
            y = rng.uniform(0.1, 2.0, 2)
            z = rng.standard_normal(2)
            u = rng.standard_normal(2)
            _, _, hess = conjugate_augmented(xi, y, z, u, rho)
            d = 1e-5
            for j in range(2):
                xp, xm = xi.copy(), xi.copy()
                xp[j] += d
                xm[j] -= d
                gp = conjugate_augmented(xp, y, z, u, rho)[1][j]
                gm = conjugate_augmented(xm, y, z, u, rho)[1][j]
                assert hess[j] == pytest.approx((gp - gm) / (2 * d), rel=1e-4, abs=1e-4)

    def test_weighted_matches_numeric(self, rng):
        rho, c = 1.5, 0.5
        xi, y, z, u = 0.7, 1.2, 0.3, -0.2
        val, grad, _ = conjugate_augmented(
            np.array([xi]), np.array([y]), np.array([z]), np.array([u]), rho, weight=c
        )
        x_star = golden_section_min(
            lambda x: -(xi * x - c * (x + y**2 * math.exp(-x)) - rho / 2 * (x - z + u) ** 2),
            -40,
            40,
        )
        assert grad[0] == pytest.approx(x_star, abs=1e-7)

    def test_rho_must_be_positive(self):
        with pytest.raises(ValidationError):
            conjugate_augmented(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), 0.0)
