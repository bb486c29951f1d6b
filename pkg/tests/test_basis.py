import numpy as np
import pytest
from scipy.interpolate import BSpline
from scipy.special import eval_jacobi

from tabkan.basis import (
    bspline_eval_all,
    bspline_knots,
    cheby_eval_all,
    frac_jacobi_eval,
    jacobi_eval,
    jacobi_eval_all,
    rational_map,
    rbf_eval,
)
from gradcheck import rel_err


class TestChebyshev:
    def test_matches_trig_identity(self):
        x = np.linspace(-1, 1, 1000)
        T, _ = cheby_eval_all(x, 6)
        for k in range(7):
            np.testing.assert_allclose(T[:, k], np.cos(k * np.arccos(x)), atol=1e-10)

    def test_derivative_matches_identity(self):
        # T_k'(x) = k U_{k-1}(x) = k sin(k t) / sin(t), x = cos t
        t = np.linspace(0.05, np.pi - 0.05, 200)
        _, dT = cheby_eval_all(np.cos(t), 6)
        for k in range(1, 7):
            np.testing.assert_allclose(dT[:, k], k * np.sin(k * t) / np.sin(t), atol=1e-9)

    def test_negative_degree_rejected(self):
        with pytest.raises(ValueError):
            cheby_eval_all(np.zeros(3), -1)


class TestJacobi:
    @pytest.mark.parametrize("a,b", [(1.0, 1.0), (0.0, 0.0), (-0.5, 2.0), (2.5, 0.3)])
    def test_explicit_sum_vs_recurrence(self, a, b):
        x = np.linspace(-1, 1, 301)
        vals, ders = jacobi_eval_all(x, 6, a, b)
        for n in range(7):
            v, d = jacobi_eval(n, a, b, x)
            np.testing.assert_allclose(v, vals[:, n], atol=1e-9)
            np.testing.assert_allclose(d, ders[:, n], atol=1e-9)

    def test_against_scipy(self):
        x = np.linspace(-1, 1, 101)
        vals, _ = jacobi_eval_all(x, 6, 1.0, 1.0)
        for n in range(7):
            np.testing.assert_allclose(vals[:, n], eval_jacobi(n, 1.0, 1.0, x), atol=1e-10)

    def test_endpoint_value(self):
        # J_n^(a,b)(1) = C(n+a, n)
        n, a, b = 5, 1.0, 1.0
        v, _ = jacobi_eval(n, a, b, np.array([1.0]))
        np.testing.assert_allclose(v, [6.0])

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            jacobi_eval(2, -1.0, 0.0, np.zeros(2))

    def test_fractional_derivatives(self):
        x = np.linspace(0.1, 0.9, 9)
        h = 1e-6
        v, dx, dnu = frac_jacobi_eval(3, 1.0, 1.0, 0.7, x)
        vp = frac_jacobi_eval(3, 1.0, 1.0, 0.7, x + h)[0]
        vm = frac_jacobi_eval(3, 1.0, 1.0, 0.7, x - h)[0]
        np.testing.assert_allclose(dx, (vp - vm) / (2 * h), rtol=1e-6)
        vp = frac_jacobi_eval(3, 1.0, 1.0, 0.7 + h, x)[0]
        vm = frac_jacobi_eval(3, 1.0, 1.0, 0.7 - h, x)[0]
        np.testing.assert_allclose(dnu, (vp - vm) / (2 * h), rtol=1e-6)


class TestBSpline:
    def test_partition_of_unity(self):
        x = np.linspace(-1, 1, 1001)
        for grid in (3, 5, 10):
            for order in (1, 2, 3):
                B, dB = bspline_eval_all(x, grid, order)
                np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
                np.testing.assert_allclose(dB.sum(axis=1), 0.0, atol=1e-10)

    def test_against_scipy_bspline(self):
        grid, k = 5, 3
        t = bspline_knots(grid, k)
        x = np.linspace(-1, 0.999, 200)
        B, dB = bspline_eval_all(x, grid, k)
        for j in range(grid + k):
            c = np.zeros(grid + k)
            c[j] = 1.0
            spl = BSpline(t, c, k)
            np.testing.assert_allclose(B[:, j], spl(x), atol=1e-12)
            np.testing.assert_allclose(dB[:, j], spl.derivative()(x), atol=1e-10)

    def test_clamped_outside(self):
        B, dB = bspline_eval_all(np.array([-3.0, 3.0]), 5, 3)
        np.testing.assert_allclose(B.sum(axis=1), 1.0)
        np.testing.assert_array_equal(dB, 0.0)


class TestMaps:
    def test_rational_map_derivatives(self):
        x = np.linspace(-3, 3, 13)
        L, h = 1.7, 1e-6
        phi, dx, dL = rational_map(x, L)
        np.testing.assert_allclose(phi, x / np.sqrt(x * x + L * L))
        assert rel_err(dx, (rational_map(x + h, L)[0] - rational_map(x - h, L)[0]) / (2 * h)) < 1e-8
        assert rel_err(dL, (rational_map(x, L + h)[0] - rational_map(x, L - h)[0]) / (2 * h)) < 1e-8

    def test_rbf(self):
        r = np.linspace(-2, 2, 9)
        phi, d = rbf_eval(r, 0.5)
        np.testing.assert_allclose(phi, np.exp(-2 * r * r))
        np.testing.assert_allclose(d, -4 * r * np.exp(-2 * r * r))
        with pytest.raises(ValueError):
            rbf_eval(r, 0.0)
