import numpy as np
import pytest
from scipy.optimize import rosen, rosen_der

from tabkan.network import NetworkSpec, build, loss_and_grad
from tabkan.optim import (
    LbfgsState,
    LineSearchFailure,
    TrainConfig,
    lbfgs_direction,
    lbfgs_minimize,
    sgd_step,
    train,
    train_with_validation,
    wolfe_line_search,
)


def dense_bfgs_direction(pairs, g):
    """-H g with H from explicit BFGS inverse updates starting at gamma I."""
    s, y = pairs[-1]
    H = (s @ y) / (y @ y) * np.eye(g.size)
    for s, y in pairs:
        rho = 1.0 / (s @ y)
        V = np.eye(g.size) - rho * np.outer(y, s)
        H = V.T @ H @ V + rho * np.outer(s, s)
    return -H @ g


def quadratic(A, b):
    return lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b)


class TestTwoLoop:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = rng.integers(2, 11)
            m = rng.integers(1, 6)
            M = rng.normal(size=(n, n))
            A = M @ M.T + n * np.eye(n)
            state = LbfgsState(m)
            pairs = []
            for _ in range(m):
                s = rng.normal(size=n)
                y = A @ s
                assert state.update(s, y)
                pairs.append((s, y))
            g = rng.normal(size=n)
            d = lbfgs_direction(state, g)
            ref = dense_bfgs_direction(pairs, g)
            assert np.linalg.norm(d - ref) / np.linalg.norm(ref) < 1e-10

    def test_history_is_bounded_and_skips_bad_curvature(self):
        state = LbfgsState(3)
        for k in range(5):
            state.update(np.ones(2) * (k + 1), np.ones(2))
        assert len(state) == 3
        assert not state.update(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
        assert len(state) == 3

    def test_empty_history_is_steepest_descent(self):
        g = np.array([1.0, -2.0])
        np.testing.assert_array_equal(lbfgs_direction(LbfgsState(5), g), -g)


class TestLineSearch:
    def test_strong_wolfe_conditions(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            x = rng.normal(size=2) * 2
            f0, g0 = rosen(x), rosen_der(x)
            d = -g0
            fun = lambda z: (rosen(z), rosen_der(z))  # noqa: E731
            a, f, g, _ = wolfe_line_search(fun, x, f0, g0, d, 1e-4, 0.9, 1.0 / np.abs(g0).sum())
            assert f <= f0 + 1e-4 * a * (g0 @ d)
            assert abs(g @ d) <= 0.9 * abs(g0 @ d)

    def test_rejects_ascent_direction(self):
        fun = lambda z: (z @ z, 2 * z)  # noqa: E731
        x = np.ones(2)
        with pytest.raises(LineSearchFailure):
            wolfe_line_search(fun, x, 2.0, 2 * x, x)

    def test_non_finite_trials_are_backtracked(self):
        def fun(z):
            if z[0] > 1.5:
                return np.nan, np.full(1, np.nan)
            return float((z[0] - 1) ** 2), 2 * (z - 1)

        a, f, _, _ = wolfe_line_search(fun, np.zeros(1), 1.0, np.array([-2.0]), np.array([2.0]), alpha0=4.0)
        assert np.isfinite(f) and f < 1.0 and a * 2.0 <= 1.5


class TestMinimize:
    def test_convex_quadratic_50d(self):
        rng = np.random.default_rng(2)
        Q, _ = np.linalg.qr(rng.normal(size=(50, 50)))
        A = Q @ np.diag(np.linspace(1, 10, 50)) @ Q.T
        b = rng.normal(size=50)
        x, f, g, rep = lbfgs_minimize(quadratic(A, b), np.zeros(50), TrainConfig(max_iter=100, gtol=1e-9))
        assert np.linalg.norm(A @ x - b) < 1e-8
        assert rep.iterations <= 100
        np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-9)

    def test_rosenbrock(self):
        fun = lambda z: (rosen(z), rosen_der(z))  # noqa: E731
        x, f, _, rep = lbfgs_minimize(fun, np.array([-1.2, 1.0]), TrainConfig(max_iter=200, gtol=1e-10))
        assert f < 1e-6
        assert rep.iterations <= 200
        assert all(b <= a + 1e-12 for a, b in zip(rep.loss_history, rep.loss_history[1:]))

    def test_already_stationary(self):
        _, _, _, rep = lbfgs_minimize(lambda z: (0.0, np.zeros(3)), np.zeros(3))
        assert rep.iterations == 0 and rep.stop_reason == "gtol"

    def test_callback_stops(self):
        _, _, _, rep = lbfgs_minimize(quadratic(np.eye(3), np.ones(3)), np.full(3, 5.0),
                                      callback=lambda k, *a: k >= 1)
        assert rep.stop_reason == "callback" and rep.iterations == 1

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(c1=0.9, c2=0.1)


class TestModelTraining:
    def _data(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(60, 3))
        y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
        return X, y

    def test_train_decreases_loss(self):
        X, y = self._data()
        model = build(NetworkSpec("cheby", [3, 2], {"order": 3}, seed=0))
        l0 = loss_and_grad(model, X, y)[0]
        rep = train(model, X, y, TrainConfig(max_iter=30))
        assert rep.final_loss < l0
        np.testing.assert_allclose(loss_and_grad(model, X, y)[0], rep.final_loss)

    def test_early_stopping_restores_best(self):
        X, y = self._data()
        model = build(NetworkSpec("cheby", [3, 8, 2], {"order": 4}, seed=0))
        rep, best = train_with_validation(model, X[:40], y[:40], X[40:], y[40:], TrainConfig(max_iter=60), patience=5)
        assert 0 <= best <= rep.iterations
        val_loss = loss_and_grad(model, X[40:], y[40:])[0]
        other = build(NetworkSpec("cheby", [3, 8, 2], {"order": 4}, seed=0))
        train(other, X[:40], y[:40], TrainConfig(max_iter=best)) if best else None
        np.testing.assert_allclose(loss_and_grad(other, X[40:], y[40:])[0], val_loss, rtol=1e-10)

    def test_sgd_step_respects_freeze(self):
        theta = np.ones(4)
        sgd_step(theta, np.ones(4), 0.5, np.array([True, False, True, False]))
        np.testing.assert_array_equal(theta, [1.0, 0.5, 1.0, 0.5])
        with pytest.raises(ValueError):
            sgd_step(theta, np.ones(4), 0.0)
