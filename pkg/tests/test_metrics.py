import numpy as np
import pytest

from tabkan.metrics import accuracy, confusion_matrix, evaluate, f1, macro_f1, precision_recall_f1, roc_auc


def brute_auc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


class TestAuc:
    def test_matches_pairwise_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(5, 60)
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            scores = rng.integers(0, 6, n) / 5.0
            assert roc_auc(scores, labels) == brute_auc(scores, labels)

    def test_known_values(self):
        y = np.array([0, 0, 1, 1])
        assert roc_auc(np.array([0.1, 0.4, 0.35, 0.8]), y) == 0.75
        assert roc_auc(np.array([0.5, 0.5, 0.5, 0.5]), y) == 0.5

    def test_single_class_is_nan(self):
        assert np.isnan(roc_auc(np.array([0.2, 0.3]), np.array([1, 1])))


class TestClassification:
    def test_confusion_and_f1(self):
        preds = np.array([1, 1, 0, 0, 1, 0])
        labels = np.array([1, 0, 0, 1, 1, 0])
        np.testing.assert_array_equal(confusion_matrix(preds, labels, 2), [[2, 1], [1, 2]])
        p, r, f = precision_recall_f1(preds, labels)
        assert (p, r) == (2 / 3, 2 / 3)
        np.testing.assert_allclose(f, 2 / 3)
        assert f1(preds, labels) == f
        np.testing.assert_allclose(macro_f1(preds, labels, 2), 2 / 3)
        assert accuracy(preds, labels) == 4 / 6

    def test_zero_division_gives_zero(self):
        assert f1(np.zeros(4, int), np.zeros(4, int)) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy(np.array([], int), np.array([], int))

    def test_evaluate_binary_and_multiclass(self):
        probs = np.array([[0.8, 0.2], [0.3, 0.7], [0.6, 0.4], [0.1, 0.9]])
        y = np.array([0, 1, 1, 1])
        rep = evaluate(probs, y)
        assert rep.auc == 1.0
        assert rep.accuracy == 0.75
        np.testing.assert_allclose(rep.f1, 0.8)
        probs3 = np.eye(3)[[0, 1, 2, 2]]
        rep3 = evaluate(probs3, np.array([0, 1, 2, 1]))
        assert np.isnan(rep3.auc)
        assert rep3.accuracy == 0.75
        assert set(rep3.to_dict()) >= {"auc", "f1", "macro_f1", "accuracy", "confusion"}
