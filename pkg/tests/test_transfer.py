import numpy as np
import pytest
from scipy.special import log_softmax

from tabkan.network import NetworkSpec, build, flatten, unflatten
from tabkan.optim import TrainConfig
from tabkan.transfer import (
    GrpoConfig,
    evaluate_bidirectional,
    group_advantages,
    grpo_finetune,
    grpo_loss_and_grad,
    kl_to_reference,
    make_overlap_split,
    mean_kl,
    pretrain_then_finetune,
    prepare_set,
)
from tabkan.network import predict_proba
from gradcheck import numeric_grad, rel_err


class TestKl:
    def test_value(self):
        z = np.array([[0.0, 1.0, 2.0]])
        ref = np.log(np.array([[0.2, 0.3, 0.5]]))
        p = np.exp(log_softmax(z, axis=1))
        kl, _ = kl_to_reference(z, ref)
        assert kl == pytest.approx(float(np.sum(p * (np.log(p) - ref))))
        assert kl_to_reference(ref, ref)[0] == pytest.approx(0.0, abs=1e-15)

    def test_gradient(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            B, M = rng.integers(1, 6), rng.integers(2, 5)
            z = rng.normal(size=(B, M))
            ref = log_softmax(rng.normal(size=(B, M)), axis=1)
            _, d = kl_to_reference(z, ref)
            assert rel_err(d, numeric_grad(lambda: kl_to_reference(z, ref)[0], z)) < 1e-8


class TestGrpo:
    def test_group_advantages(self):
        np.testing.assert_allclose(group_advantages([[1, 1, 1], [0, 1, 1]]), [[0, 0, 0], [-2 / 3, 1 / 3, 1 / 3]])

    def test_equal_rewards_give_zero_policy_gradient(self):
        model = build(NetworkSpec("cheby", [3, 2], {"order": 2}, 0))
        layer = model.layers[0]
        layer.zero_()
        layer.params["coeffs"][0, 1, 0] = 60.0
        X = np.random.default_rng(0).normal(size=(10, 3))
        ref = log_softmax(np.zeros((10, 2)), axis=1)
        loss, grad, info = grpo_loss_and_grad(model, X, np.ones(10, int), ref, 0.0, np.random.default_rng(1))
        assert info["pg"] == 0.0 and loss == 0.0
        np.testing.assert_array_equal(info["advantages"], 0.0)
        np.testing.assert_array_equal(grad, 0.0)

    def test_gradient_for_fixed_samples(self):
        model = build(NetworkSpec("cheby", [3, 4, 3], {"order": 2}, 0))
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(6, 3)), rng.integers(0, 3, 6)
        ref = log_softmax(rng.normal(size=(6, 3)), axis=1)
        theta = flatten(model)
        _, grad, _ = grpo_loss_and_grad(model, X, y, ref, 2.0, np.random.default_rng(9), 4)

        def f():
            unflatten(model, theta)
            return grpo_loss_and_grad(model, X, y, ref, 2.0, np.random.default_rng(9), 4)[0]

        assert rel_err(grad, numeric_grad(f, theta)) < 1e-6

    def test_finetune_leaves_frozen_entries(self):
        from tabkan.network import set_freeze

        model = build(NetworkSpec("fourier", [3, 4, 2], {"grid": 2}, 0))
        set_freeze(model, "all_but_head")
        before = flatten(model)
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(40, 3)), rng.integers(0, 2, 40)
        ref = predict_proba(model, X)
        grpo_finetune(model, X, y, GrpoConfig(steps=5, batch_size=16, beta=1.0))
        after = flatten(model)
        np.testing.assert_array_equal(after[model.freeze_mask], before[model.freeze_mask])
        assert np.any(after != before)
        assert mean_kl(model, X, ref) >= 0.0

    def test_clipped_step_length(self):
        from tabkan.network import set_freeze

        model = build(NetworkSpec("cheby", [3, 4, 2], {"order": 3}, 0))
        set_freeze(model, "all_but_head")
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(40, 3)), rng.integers(0, 2, 40)
        before = flatten(model)
        steps = {}
        for clip in (None, 0.01):
            unflatten(model, before.copy())
            grpo_finetune(model, X, y, GrpoConfig(steps=1, lr=0.5, max_grad_norm=clip))
            steps[clip] = np.linalg.norm(flatten(model) - before)
        assert steps[None] > 0.5 * 0.01
        assert steps[0.01] <= 0.5 * 0.01 * (1 + 1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GrpoConfig(group_size=1)
        with pytest.raises(ValueError):
            GrpoConfig(beta=-1.0)
        with pytest.raises(ValueError):
            GrpoConfig(max_grad_norm=0.0)


class TestOverlap:
    def test_split_structure(self, cg):
        split = make_overlap_split(cg, 0)
        n = len(split.columns)
        assert len(split.shared) == n // 2
        assert abs(len(split.set1_only) - len(split.set2_only)) <= 1
        assert sorted(split.shared + split.set1_only + split.set2_only) == sorted(split.columns)
        assert np.intersect1d(split.set1_rows, split.set2_rows).size == 0
        assert split.set1_rows.size + split.set2_rows.size == cg.y.size
        assert abs(cg.y[split.set1_rows].mean() - cg.y[split.set2_rows].mean()) < 0.01

    def test_absent_columns_are_zero(self, cg):
        split = make_overlap_split(cg, 0)
        P = prepare_set(cg, split, 1, "standard", 0)
        owned = set(split.set_columns(1))
        absent = [j for j, s in enumerate(cg.source_columns) if s not in owned]
        assert absent
        np.testing.assert_array_equal(P.x_train[:, absent], 0.0)
        assert P.n_features == cg.x.shape[1]

    def test_both_directions(self, toy):
        split = make_overlap_split(toy, 0)
        spec = NetworkSpec("fourier", [4, 3, 2], {"grid": 2}, 0)
        results = pretrain_then_finetune(spec, toy, split, "standard", seed=0,
                                         train_cfg=TrainConfig(max_iter=15), patience=3)
        assert [(r.source, r.target) for r in results] == [(1, 2), (2, 1)]
        for r in results:
            assert r.frozen_hash_before == r.frozen_hash_after
        summary = evaluate_bidirectional(results)
        assert summary["macro"]["finetuned_auc"] == pytest.approx(
            np.mean([r.finetuned["auc"] for r in results]))
        with pytest.raises(ValueError):
            evaluate_bidirectional(results[:1])
