"""Classification metrics: ROC-AUC, F1, macro-F1, accuracy, precision, recall."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "roc_auc",
    "confusion_matrix",
    "precision_recall_f1",
    "f1",
    "macro_f1",
    "accuracy",
    "MetricReport",
    "evaluate",
]


def _labels(y):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be a 1-D array")
    return y.astype(int)


def roc_auc(scores, labels):
    """Mann-Whitney AUC with midrank ties.

    Returns nan when only one class is present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = _labels(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_matrix(preds, labels, n_classes=None):
    """Rows are true labels, columns are predictions."""
    preds, labels = _labels(preds), _labels(labels)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have the same length")
    if n_classes is None:
        n_classes = int(max(preds.max(initial=0), labels.max(initial=0))) + 1
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _safe_div(a, b):
    return a / b if b > 0 else 0.0


def precision_recall_f1(preds, labels, positive=1):
    preds, labels = _labels(preds), _labels(labels)
    tp = int(np.sum((preds == positive) & (labels == positive)))
    fp = int(np.sum((preds == positive) & (labels != positive)))
    fn = int(np.sum((preds != positive) & (labels == positive)))
    p = _safe_div(tp, tp + fp)
    r = _safe_div(tp, tp + fn)
    return p, r, _safe_div(2.0 * p * r, p + r)


def f1(preds, labels, positive=1):
    """Binary F1 for one class; 0/0 counts as 0."""
    return precision_recall_f1(preds, labels, positive)[2]


def macro_f1(preds, labels, n_classes):
    return float(np.mean([f1(preds, labels, c) for c in range(n_classes)]))


def accuracy(preds, labels):
    preds, labels = _labels(preds), _labels(labels)
    if preds.size == 0:
        raise ValueError("accuracy of empty input is undefined")
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have the same length")
    return float(np.mean(preds == labels))


@dataclass
class MetricReport:
    auc: float
    f1: float
    macro_f1: float
    accuracy: float
    precision: float
    recall: float
    confusion: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def evaluate(probs, labels) -> MetricReport:
    """Metrics from class-probability rows.

    Binary problems score AUC on the second column and report F1, precision
    and recall for class 1. Multi-class problems report macro averages and
    leave AUC as nan.
    """
    probs = np.asarray(probs, dtype=float)
    labels = _labels(labels)
    M = probs.shape[1]
    preds = probs.argmax(axis=1)
    cm = confusion_matrix(preds, labels, M)
    if M == 2:
        auc = roc_auc(probs[:, 1], labels)
        p, r, f = precision_recall_f1(preds, labels, 1)
    else:
        auc = float("nan")
        prf = np.array([precision_recall_f1(preds, labels, c) for c in range(M)])
        p, r, f = prf.mean(axis=0)
    return MetricReport(
        auc=auc,
        f1=float(f),
        macro_f1=macro_f1(preds, labels, M),
        accuracy=accuracy(preds, labels),
        precision=float(p),
        recall=float(r),
        confusion=cm.tolist(),
    )
