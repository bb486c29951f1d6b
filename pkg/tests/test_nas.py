import numpy as np
import pytest

from tabkan.datapipe import prepare
from tabkan.nas import (
    Dim,
    SearchConfig,
    SearchSpace,
    decode,
    encode,
    expected_improvement,
    fit_protocol,
    gp_fit,
    gp_posterior,
    kfold_evaluate,
    propose_next,
    run_search,
    snap,
    space_for,
)
from tabkan.network import NetworkSpec
from tabkan.optim import TrainConfig


def forrester(x):
    return (6 * x - 2) ** 2 * np.sin(12 * x - 4)


def bo_best(seed, budget=30, n_init=5):
    """Maximize -forrester over x = k/1000, k in 0..1000."""
    space = SearchSpace("toy", (Dim("x", 0, 1000),))
    cfg = SearchConfig(n_trials=budget, n_init=n_init, pool_size=512)
    rng = np.random.default_rng(seed)
    pts = [snap(p, space) for p in rng.random((n_init, 1))]
    vals = [-forrester(p[0]) for p in pts]
    while len(vals) < budget:
        gp = gp_fit(pts, vals)
        p = propose_next(gp, space, cfg, rng)
        pts.append(p)
        vals.append(-forrester(p[0]))
    return max(vals)


def random_best(seed, budget=30):
    rng = np.random.default_rng(seed)
    return max(-forrester(rng.integers(0, 1001, budget) / 1000.0))


class TestExpectedImprovement:
    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            mu, sigma, xi = rng.normal(), rng.uniform(0.05, 2), rng.uniform(0, 0.1)
            best = mu + sigma * rng.uniform(-2, 2)
            draws = np.maximum(rng.normal(mu, sigma, 10**6) - best - xi, 0.0)
            se = draws.std() / np.sqrt(draws.size)
            assert abs(expected_improvement(mu, sigma, best, xi) - draws.mean()) < 3 * se

    def test_zero_sigma(self):
        np.testing.assert_allclose(expected_improvement([1.0, 0.0], [0.0, 0.0], 0.5, 0.0), [0.5, 0.0])


class TestGp:
    def test_posterior_formula(self):
        rng = np.random.default_rng(1)
        X, y = rng.random((8, 2)), rng.normal(size=8)
        gp = gp_fit(X, y)
        xs = rng.random((5, 2))
        k = lambda a, b: np.exp(-0.5 * ((a[:, None] - b[None]) ** 2).sum(-1) / gp.lengthscale**2)  # noqa: E731
        K = k(X, X) + gp.jitter * np.eye(8)
        ys = (y - y.mean()) / y.std()
        mean = y.mean() + y.std() * k(xs, X) @ np.linalg.solve(K, ys)
        var = 1.0 - np.einsum("ij,ji->i", k(xs, X), np.linalg.solve(K, k(X, xs)))
        mu, sd = gp_posterior(gp, xs)
        np.testing.assert_allclose(mu, mean, atol=1e-8)
        np.testing.assert_allclose(sd, y.std() * np.sqrt(np.maximum(var, 0)), atol=1e-6)

    def test_interpolates_observations(self):
        X = np.linspace(0, 1, 6)[:, None]
        y = np.sin(6 * X[:, 0])
        mu, sd = gp_posterior(gp_fit(X, y), X)
        np.testing.assert_allclose(mu, y, atol=1e-4)
        assert np.all(sd < 1e-2)

    def test_duplicate_points_need_jitter(self):
        gp = gp_fit(np.zeros((3, 1)).tolist() + [[1.0]], [1.0, 1.0, 1.0, 0.0])
        assert np.isfinite(gp.alpha).all()

    def test_bo_beats_random_search(self):
        bo = np.median([bo_best(s) for s in range(20)])
        rs = np.median([random_best(s) for s in range(20)])
        assert bo > rs


class TestSpace:
    def test_dim_rounding(self):
        d = Dim("width", 5, 100, 5)
        assert d.from_unit(0.0) == 5 and d.from_unit(1.0) == 100
        assert d.from_unit(d.to_unit(55)) == 55
        assert Dim("k", 0, 1).from_unit(0.5) == 0
        with pytest.raises(ValueError):
            d.to_unit(7)

    def test_encode_decode_roundtrip(self):
        for variant in ("cheby", "fourier", "pade", "fast", "spline"):
            space = space_for(variant)
            rng = np.random.default_rng(0)
            for _ in range(10):
                spec = decode(rng.random(space.ndim), space, 7, 3)
                assert spec.widths[0] == 7 and spec.widths[-1] == 3
                again = decode(encode(spec, space), space, 7, 3)
                assert again.widths == spec.widths and again.hyper == spec.hyper

    def test_depth_counts_hidden_layers(self):
        space = space_for("cheby")
        spec = decode(np.zeros(space.ndim), space, 4, 2)
        assert spec.widths == [4, 5, 2] and spec.hyper == {"order": 2}
        spec = decode(np.ones(space.ndim), space, 4, 2)
        assert spec.widths == [4] + [100] * 10 + [2]

    def test_proposals_are_distinct_and_on_grid(self):
        space = space_for("fourier")
        rng = np.random.default_rng(2)
        pts = [snap(p, space) for p in rng.random((6, space.ndim))]
        gp = gp_fit(pts, rng.random(6))
        props = propose_next(gp, space, SearchConfig(), rng, n=4)
        assert len({tuple(p) for p in props}) == 4
        np.testing.assert_array_equal(props, np.array([snap(p, space) for p in props]))

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            space_for("mlp")


class TestSearch:
    def test_search_is_deterministic(self, toy):
        data = prepare(toy, "standard", 0)
        cfg = SearchConfig(n_trials=4, n_init=2, seed=3, pool_size=64, train=TrainConfig(max_iter=15))
        a = run_search(data, "fast", cfg)
        b = run_search(data, "fast", cfg)
        assert len(a.trials) == 4
        assert [t.objective for t in a.trials] == [t.objective for t in b.trials]
        assert a.best.objective == max(t.objective for t in a.trials)
        assert set(a.best.to_row()) == {"index", "config", "val_f1", "seconds"}

    def test_fit_protocol(self, toy):
        data = prepare(toy, "standard", 0)
        spec = NetworkSpec("cheby", [4, 2], {"order": 3}, 0)
        model, info = fit_protocol(spec, data, TrainConfig(max_iter=40), patience=5)
        assert info["final_report"].iterations <= max(info["best_iter"], 1)

    def test_kfold(self, toy):
        spec = NetworkSpec("cheby", [4, 2], {"order": 2}, 0)
        rows, summary = kfold_evaluate(toy, spec, 3, seed=0, train_cfg=TrainConfig(max_iter=20), patience=5)
        assert len(rows) == 3 and summary["K"] == 3
        np.testing.assert_allclose(summary["accuracy_mean"], np.mean([r["accuracy"] for r in rows]))
