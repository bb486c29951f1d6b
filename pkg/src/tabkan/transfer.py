"""Feature-overlap transfer: pretrain on one column set, fine-tune the head on another.

Both sets share one union input layout. Columns a set does not own are
zero-filled after scaling, so one backbone serves both phases.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import log_softmax

from . import metrics
from .datapipe import prepare
from .nas import fit_protocol
from .network import backprop, build, flatten, predict_logits, predict_proba, set_freeze, unflatten
from .optim import TrainConfig, sgd_step, train_with_validation
from .seeds import derive_seed

__all__ = [
    "OverlapSplit",
    "make_overlap_split",
    "prepare_set",
    "GrpoConfig",
    "group_advantages",
    "kl_to_reference",
    "grpo_loss_and_grad",
    "grpo_finetune",
    "mean_kl",
    "DirectionResult",
    "pretrain_then_finetune",
    "evaluate_bidirectional",
]


@dataclass
class OverlapSplit:
    columns: list
    shared: list
    set1_only: list
    set2_only: list
    set1_rows: np.ndarray
    set2_rows: np.ndarray
    seed: int

    def set_columns(self, which):
        return self.shared + (self.set1_only if which == 1 else self.set2_only)

    def to_dict(self):
        return {
            "seed": self.seed,
            "columns": self.columns,
            "shared": self.shared,
            "set1_only": self.set1_only,
            "set2_only": self.set2_only,
            "set1_rows": self.set1_rows.tolist(),
            "set2_rows": self.set2_rows.tolist(),
        }


def make_overlap_split(ds, seed):
    """Half the raw columns shared, the rest split evenly; rows split 50/50 by class."""
    columns = list(dict.fromkeys(ds.source_columns or ds.feature_names))
    n = len(columns)
    if n < 4:
        raise ValueError("need at least four features for an overlap split")
    rng = np.random.default_rng(seed)
    perm = [columns[i] for i in rng.permutation(n)]
    n_shared = n // 2
    rest = perm[n_shared:]
    n1 = (len(rest) + 1) // 2
    keep = lambda group: [c for c in columns if c in set(group)]  # noqa: E731
    rows1, rows2 = [], []
    for c in np.unique(ds.y):
        idx = rng.permutation(np.flatnonzero(ds.y == c))
        half = (idx.size + 1) // 2
        rows1.append(idx[:half])
        rows2.append(idx[half:])
    return OverlapSplit(
        columns,
        keep(perm[:n_shared]),
        keep(rest[:n1]),
        keep(rest[n1:]),
        np.sort(np.concatenate(rows1)),
        np.sort(np.concatenate(rows2)),
        int(seed),
    )


def prepare_set(ds, split, which, scale="standard", seed=0):
    """Own 70/10/20 split and scaler for one set, absent columns zero-filled."""
    rows = split.set1_rows if which == 1 else split.set2_rows
    owned = set(split.set_columns(which))
    src = ds.source_columns or ds.feature_names
    absent = np.array([s not in owned for s in src])
    P = prepare(ds.subset(rows), scale, seed)
    zero = lambda x: np.where(absent, 0.0, x)  # noqa: E731
    return replace(P, x_train=zero(P.x_train), x_val=zero(P.x_val), x_test=zero(P.x_test))


@dataclass
class GrpoConfig:
    group_size: int = 8
    beta: float = 0.0
    lr: float = 1e-2
    steps: int = 200
    batch_size: int = 64
    seed: int = 0
    max_grad_norm: float = 1.0  # None disables clipping

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group size must be >= 2")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            raise ValueError("max_grad_norm must be positive or None")


def group_advantages(rewards):
    """Reward minus its group mean, per row of a (B, G) reward array."""
    r = np.asarray(rewards, dtype=float)
    return r - r.mean(axis=-1, keepdims=True)


def kl_to_reference(logits, ref_logp):
    """Mean over rows of sum_c pi (log pi - log pi_ref), with d/dlogits."""
    logp = log_softmax(logits, axis=1)
    p = np.exp(logp)
    diff = logp - ref_logp
    kl_rows = np.sum(p * diff, axis=1)
    B = logits.shape[0]
    d = p * (diff - kl_rows[:, None]) / B
    return float(kl_rows.mean()), d


def grpo_loss_and_grad(model, X, y, ref_logp, beta, rng, group_size=8):
    """One stochastic GRPO objective sample and its flat gradient.

    Returns ``(loss, grad, info)``; ``info`` holds the policy-gradient and KL
    parts and the sampled advantages.
    """
    y = np.asarray(y, dtype=int)
    info = {}

    def logit_loss(z):
        B, M = z.shape
        logp = log_softmax(z, axis=1)
        p = np.exp(logp)
        cum = np.cumsum(p, axis=1)
        u = rng.random((B, group_size))
        samples = np.minimum((u[..., None] > cum[:, None, :]).sum(axis=-1), M - 1)
        adv = group_advantages(samples == y[:, None])
        pg = -float(np.mean(np.take_along_axis(logp, samples, axis=1) * adv))
        d = np.zeros_like(z)
        # grad of -log pi(o) is (pi - onehot(o)); the pi part cancels since sum(adv) = 0
        np.add.at(d, (np.repeat(np.arange(B), group_size), samples.ravel()), -adv.ravel())
        d /= B * group_size
        kl, dkl = kl_to_reference(z, ref_logp)
        info.update(pg=pg, kl=kl, advantages=adv)
        return pg + beta * kl, d + beta * dkl

    loss, grad = backprop(model, X, logit_loss)
    return loss, grad, info


def grpo_finetune(model, X, y, config=None):
    """SGD on the GRPO objective against a snapshot of the starting policy.

    The trainable part of each gradient is rescaled to norm at most
    ``config.max_grad_norm``; a large KL weight otherwise makes fixed-step SGD
    overshoot the reference policy.
    """
    config = config or GrpoConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(config.seed)
    ref_model_logp = log_softmax(predict_logits(model, X), axis=1)
    theta = flatten(model)
    history = []
    for _ in range(config.steps):
        bs = min(config.batch_size, X.shape[0])
        idx = rng.choice(X.shape[0], size=bs, replace=False)
        loss, grad, info = grpo_loss_and_grad(
            model, X[idx], y[idx], ref_model_logp[idx], config.beta, rng, config.group_size
        )
        grad = np.where(model.freeze_mask, 0.0, grad)
        norm = np.linalg.norm(grad)
        if config.max_grad_norm is not None and norm > config.max_grad_norm:
            grad = grad * (config.max_grad_norm / norm)
        sgd_step(theta, grad, config.lr, model.freeze_mask)
        unflatten(model, theta)
        history.append((loss, info["pg"], info["kl"]))
    h = np.array(history)
    return {"steps": config.steps, "final_loss": float(h[-1, 0]), "mean_pg": float(h[:, 1].mean()),
            "final_kl": float(h[-1, 2])}


def mean_kl(model, X, ref_probs):
    """Average KL(pi_model || ref) over rows."""
    return kl_to_reference(predict_logits(model, X), np.log(ref_probs))[0]


def _frozen_digest(model):
    theta = flatten(model)
    return hashlib.sha256(theta[model.freeze_mask].astype("<f8").tobytes()).hexdigest()


def _scores(model, X, y):
    p = predict_proba(model, X)
    rep = metrics.evaluate(p, y)
    return {"auc": rep.auc, "f1": rep.f1, "accuracy": rep.accuracy}


@dataclass
class DirectionResult:
    source: int
    target: int
    zero_shot: dict
    finetuned: dict
    frozen_hash_before: str
    frozen_hash_after: str
    best_iter: int = 0
    finetune: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _direction(spec, sets, src, dst, mode, train_cfg, grpo_cfg, patience):
    source, target = sets[src], sets[dst]
    model, info = fit_protocol(spec, source, train_cfg, patience=patience)
    zero = _scores(model, target.x_test, target.y_test)
    set_freeze(model, "all_but_head")
    before = _frozen_digest(model)
    if mode == "standard":
        rep, best = train_with_validation(
            model, target.x_train, target.y_train, target.x_val, target.y_val, train_cfg, patience=patience
        )
        ft = {"iterations": rep.iterations, "best_iter": best}
    elif mode == "grpo":
        ft = grpo_finetune(model, target.x_train, target.y_train, grpo_cfg)
    else:
        raise ValueError(f"unknown fine-tune mode {mode!r}")
    after = _frozen_digest(model)
    return DirectionResult(src, dst, zero, _scores(model, target.x_test, target.y_test),
                           before, after, info["best_iter"], ft)


def pretrain_then_finetune(spec, ds, split, mode="standard", scale="standard", seed=0,
                           train_cfg=None, grpo_cfg=None, patience=20, workers=1):
    """Run both transfer directions; returns ``[result 1->2, result 2->1]``."""
    train_cfg = train_cfg or TrainConfig(max_iter=300)
    grpo_cfg = grpo_cfg or GrpoConfig(seed=derive_seed(seed, "grpo"))
    sets = {1: prepare_set(ds, split, 1, scale, seed), 2: prepare_set(ds, split, 2, scale, seed)}
    if spec.widths[0] != sets[1].n_features:
        raise ValueError("spec input width must equal the union feature count")
    args = [(spec, sets, 1, 2, mode, train_cfg, grpo_cfg, patience),
            (spec, sets, 2, 1, mode, train_cfg, grpo_cfg, patience)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=2) as ex:
            return list(ex.map(lambda a: _direction(*a), args))
    return [_direction(*a) for a in args]


def evaluate_bidirectional(results):
    """Per-direction metrics plus their macro average."""
    dirs = {(r.source, r.target) for r in results}
    if dirs != {(1, 2), (2, 1)} or len(results) != 2:
        raise ValueError("both transfer directions are required")
    rows = [
        {"direction": f"set{r.source}->set{r.target}", **{f"zero_shot_{k}": v for k, v in r.zero_shot.items()},
         **{f"finetuned_{k}": v for k, v in r.finetuned.items()}}
        for r in sorted(results, key=lambda r: r.source)
    ]
    keys = [k for k in rows[0] if k != "direction"]
    macro = {k: float(np.mean([row[k] for row in rows])) for k in keys}
    return {"directions": rows, "macro": macro}
