import json

import numpy as np
import pytest

from tabkan.network import (
    NetworkSpec,
    NonFiniteLossError,
    build,
    cross_entropy,
    flatten,
    load_checkpoint,
    loss_and_grad,
    predict_proba,
    save_checkpoint,
    set_freeze,
    unflatten,
)
from gradcheck import numeric_grad, rel_err


def _model(variant="cheby", widths=(4, 5, 3), **hyper):
    return build(NetworkSpec(variant, list(widths), hyper or {"order": 3}, seed=1))


class TestObjective:
    def test_cross_entropy_value_and_grad(self):
        z = np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]])
        y = np.array([1, 2])
        loss, d = cross_entropy(z, y)
        p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
        np.testing.assert_allclose(loss, -np.mean(np.log(p[[0, 1], y])))
        np.testing.assert_allclose(d, (p - np.eye(3)[y]) / 2)

    @pytest.mark.parametrize("variant,hyper", [("cheby", {"order": 3}), ("fourier", {"grid": 2}),
                                               ("pade", {"degrees": [2, 2]}), ("fkan", {"order": 2})])
    def test_flat_gradient(self, variant, hyper):
        model = _model(variant, **hyper)
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(7, 4)), rng.integers(0, 3, 7)
        theta = flatten(model)
        _, g = loss_and_grad(model, X, y)

        def f():
            unflatten(model, theta)
            return loss_and_grad(model, X, y)[0]

        assert rel_err(g, numeric_grad(f, theta)) < 1e-6

    def test_probabilities_sum_to_one(self):
        model = _model()
        p = predict_proba(model, np.random.default_rng(0).normal(size=(6, 4)))
        np.testing.assert_allclose(p.sum(1), 1.0)

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((2, 2)), np.array([0, 2]))

    def test_non_finite_reports_layer(self):
        model = _model()
        model.layers[1].params["coeffs"][...] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(NonFiniteLossError) as info:
            loss_and_grad(model, np.zeros((2, 4)), np.array([0, 1]))
        assert info.value.layer_index == 1


class TestBuild:
    def test_deterministic(self):
        np.testing.assert_array_equal(flatten(_model()), flatten(_model()))

    def test_width_checks(self):
        spec = NetworkSpec("cheby", [4, 3], {"order": 2})
        with pytest.raises(ValueError):
            build(spec, n_features=5)
        with pytest.raises(ValueError):
            build(spec, n_classes=2)
        with pytest.raises(ValueError):
            NetworkSpec("nope", [2, 2])

    def test_unflatten_roundtrip(self):
        model = _model()
        theta = np.arange(model.param_count(), dtype=float)
        unflatten(model, theta)
        np.testing.assert_array_equal(flatten(model), theta)
        with pytest.raises(ValueError):
            unflatten(model, theta[:-1])


class TestFreeze:
    def test_all_but_head(self):
        model = _model("fourier", (4, 5, 3), grid=2)
        set_freeze(model, "all_but_head")
        first = model.layers[0]
        n_first = first.param_count()
        n_bias = first.params["bias"].size
        assert model.freeze_mask[:n_first].sum() == n_first - n_bias
        assert not model.freeze_mask[n_first:].any()
        rng = np.random.default_rng(0)
        _, g = loss_and_grad(model, rng.normal(size=(5, 4)), rng.integers(0, 3, 5), lam=1e-2)
        np.testing.assert_array_equal(g[model.freeze_mask], 0.0)
        set_freeze(model, "none")
        assert not model.freeze_mask.any()
        with pytest.raises(ValueError):
            set_freeze(model, "half")


class TestCheckpoint:
    @pytest.mark.parametrize("variant,hyper", [("cheby", {"order": 3}), ("pade", {"degrees": [2, 3]}),
                                               ("spline", {"grid": 4}), ("fast", {})])
    def test_roundtrip(self, tmp_path, variant, hyper):
        model = build(NetworkSpec(variant, [3, 4, 2], hyper, seed=5))
        set_freeze(model, "all_but_head")
        unflatten(model, np.random.default_rng(1).normal(size=model.param_count()))
        save_checkpoint(model, tmp_path / "m")
        loaded = load_checkpoint(tmp_path / "m.bin")
        np.testing.assert_array_equal(flatten(loaded), flatten(model))
        np.testing.assert_array_equal(loaded.freeze_mask, model.freeze_mask)
        X = np.random.default_rng(2).normal(size=(4, 3))
        np.testing.assert_array_equal(predict_proba(loaded, X), predict_proba(model, X))

    def test_header_layout(self, tmp_path):
        model = _model()
        save_checkpoint(model, tmp_path / "m")
        header = json.loads((tmp_path / "m.json").read_text())
        assert header["total_bytes"] == model.param_count() * 8
        assert (tmp_path / "m.bin").stat().st_size == header["total_bytes"]
        t = header["layers"][1]["tensors"][0]
        assert t["offset"] == model.layers[0].param_count() * 8

    def test_truncated_payload(self, tmp_path):
        save_checkpoint(_model(), tmp_path / "m")
        blob = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "m.bin").write_bytes(blob[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "m")
