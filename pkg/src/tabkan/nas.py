"""Architecture search by Gaussian-process Bayesian optimization.

Integer hyperparameters live on a unit hypercube; a squared-exponential GP
models validation F1 and expected improvement picks the next configuration
from a random candidate pool.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist, pdist
from scipy.stats import norm

from . import metrics
from .network import NetworkSpec, NonFiniteLossError, build, predict_proba
from .optim import TrainConfig, train, train_with_validation
from .seeds import derive_seed

__all__ = [
    "Dim",
    "SearchSpace",
    "space_for",
    "encode",
    "decode",
    "GpSurrogate",
    "gp_fit",
    "gp_posterior",
    "expected_improvement",
    "propose_next",
    "SearchConfig",
    "Trial",
    "SearchResult",
    "objective_f1",
    "run_search",
    "fit_final",
    "fit_protocol",
    "kfold_evaluate",
]


@dataclass(frozen=True)
class Dim:
    name: str
    lo: int
    hi: int
    step: int = 1

    @property
    def values(self):
        return np.arange(self.lo, self.hi + 1, self.step)

    def to_unit(self, v):
        if v not in set(self.values.tolist()):
            raise ValueError(f"{self.name}={v} outside {self.lo}..{self.hi} step {self.step}")
        return 0.0 if self.hi == self.lo else (v - self.lo) / (self.hi - self.lo)

    def from_unit(self, u):
        vals = self.values
        raw = self.lo + float(np.clip(u, 0.0, 1.0)) * (self.hi - self.lo)
        # argmin picks the lower value on exact ties
        return int(vals[np.argmin(np.abs(vals - raw))])


@dataclass(frozen=True)
class SearchSpace:
    """Depth counts hidden layers; all hidden layers share one width."""

    variant: str
    dims: tuple

    def dim(self, name):
        return next(d for d in self.dims if d.name == name)

    @property
    def ndim(self):
        return len(self.dims)


def _common(depth_hi, width_lo, width_hi, width_step):
    return (Dim("depth", 1, depth_hi), Dim("width", width_lo, width_hi, width_step))


_SPACES = {
    "cheby": _common(10, 5, 100, 5) + (Dim("order", 2, 6),),
    "fkan": _common(10, 5, 100, 5) + (Dim("order", 2, 6),),
    "jacobi_r": _common(10, 5, 100, 5) + (Dim("order", 2, 6),),
    "fast": _common(5, 5, 50, 1),
    "pade": _common(5, 5, 100, 5) + (Dim("num_degree", 2, 6), Dim("den_degree", 2, 6)),
    "fourier": _common(5, 5, 50, 1) + (Dim("grid", 1, 10),),
    "spline": _common(5, 5, 50, 1) + (Dim("grid", 3, 10),),
}


def space_for(variant):
    if variant not in _SPACES:
        raise ValueError(f"unknown variant {variant!r}")
    return SearchSpace(variant, _SPACES[variant])


def _config_to_hyper(variant, cfg):
    if variant == "pade":
        return {"degrees": [cfg["num_degree"], cfg["den_degree"]]}
    if variant in ("cheby", "fkan", "jacobi_r"):
        return {"order": cfg["order"]}
    if variant in ("fourier", "spline"):
        return {"grid": cfg["grid"]}
    return {}


def _spec_to_config(spec):
    hidden = spec.widths[1:-1]
    if not hidden or len(set(hidden)) != 1:
        raise ValueError("searchable specs have at least one hidden layer, all of one width")
    cfg = {"depth": len(hidden), "width": hidden[0]}
    h = spec.hyper
    if spec.variant == "pade":
        cfg["num_degree"], cfg["den_degree"] = (int(v) for v in h["degrees"])
    elif "order" in h:
        cfg["order"] = int(h["order"])
    elif "grid" in h:
        cfg["grid"] = int(h["grid"])
    return cfg


def encode(spec, space):
    cfg = _spec_to_config(spec)
    return np.array([d.to_unit(cfg[d.name]) for d in space.dims])


def decode(point, space, n_features, n_classes, seed=0):
    cfg = {d.name: d.from_unit(u) for d, u in zip(space.dims, np.asarray(point, dtype=float))}
    widths = [n_features] + [cfg["width"]] * cfg["depth"] + [n_classes]
    return NetworkSpec(space.variant, widths, _config_to_hyper(space.variant, cfg), seed)


def snap(point, space):
    """Nearest on-grid point in the unit cube."""
    return np.array(
        [d.to_unit(d.from_unit(u)) for d, u in zip(space.dims, np.asarray(point, dtype=float))]
    )


@dataclass
class GpSurrogate:
    X: np.ndarray
    y_mean: float
    y_scale: float
    lengthscale: float
    jitter: float
    chol: tuple
    alpha: np.ndarray
    y: np.ndarray
    signal_var: float = 1.0


def _kernel(A, B, ell, signal_var=1.0):
    return signal_var * np.exp(-0.5 * cdist(A, B, "sqeuclidean") / ell**2)


def gp_fit(points, values, jitter=1e-6, max_jitter=1e-2):
    """SE-kernel GP on standardized targets with a median-distance length-scale."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(values, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("need at least two observations")
    mu = float(y.mean())
    sd = float(y.std())
    sd = sd if sd > 0 else 1.0
    ys = (y - mu) / sd
    d = pdist(X)
    d = d[d > 0]
    ell = float(np.median(d)) if d.size else 1.0
    K = _kernel(X, X, ell)
    j = jitter
    while True:
        try:
            chol = cho_factor(K + j * np.eye(len(X)), lower=True)
            break
        except LinAlgError:
            j *= 10.0
            if j > max_jitter * (1 + 1e-9):
                raise
    alpha = cho_solve(chol, ys)
    return GpSurrogate(X, mu, sd, ell, j, chol, alpha, y)


def gp_posterior(gp, x):
    """Posterior mean and standard deviation on the original target scale."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    Ks = _kernel(x, gp.X, gp.lengthscale, gp.signal_var)
    mean = Ks @ gp.alpha
    v = solve_triangular(gp.chol[0], Ks.T, lower=True)
    var = np.maximum(gp.signal_var - np.sum(v * v, axis=0), 0.0)
    return gp.y_mean + gp.y_scale * mean, gp.y_scale * np.sqrt(var)


def expected_improvement(mu, sigma, best, xi=0.01):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = mu - best - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, imp / np.where(sigma > 0, sigma, 1.0), 0.0)
    ei = np.where(sigma > 0, imp * norm.cdf(z) + sigma * norm.pdf(z), np.maximum(imp, 0.0))
    return np.maximum(ei, 0.0)


@dataclass
class SearchConfig:
    n_trials: int = 100
    n_init: int = 10
    xi: float = 0.01
    pool_size: int = 2048
    seed: int = 0
    workers: int = 1
    patience: int = 20
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_iter=300))

    def __post_init__(self):
        if self.xi < 0 or self.n_init < 1 or self.n_trials < self.n_init:
            raise ValueError("need xi >= 0 and n_trials >= n_init >= 1")


def propose_next(gp, space, config, rng, best=None, n=1):
    """Top-EI candidates (first index wins ties) from a fresh uniform pool."""
    pool = rng.random((config.pool_size, space.ndim))
    pool = np.array([snap(p, space) for p in pool])
    mu, sigma = gp_posterior(gp, pool)
    y_star = float(np.max(gp.y)) if best is None else best
    ei = expected_improvement(mu, sigma, y_star, config.xi)
    if n == 1:
        return pool[int(np.argmax(ei))]
    order = np.argsort(-ei, kind="stable")
    picked, seen = [], set()
    for i in order:
        key = tuple(pool[i])
        if key not in seen:
            seen.add(key)
            picked.append(pool[i])
        if len(picked) == n:
            break
    return np.array(picked)


@dataclass
class Trial:
    index: int
    point: list
    spec: NetworkSpec
    objective: float
    seconds: float
    best_iter: int = 0
    report: dict = field(default_factory=dict)
    failed: bool = False

    def config(self):
        return _spec_to_config(self.spec)

    def to_row(self):
        return {
            "index": self.index,
            "config": self.config(),
            "val_f1": self.objective,
            "seconds": self.seconds,
        }


def objective_f1(probs, labels):
    """Binary F1 on class 1, macro-F1 for more than two classes."""
    preds = np.asarray(probs).argmax(axis=1)
    M = np.asarray(probs).shape[1]
    return metrics.f1(preds, labels, 1) if M == 2 else metrics.macro_f1(preds, labels, M)


def _evaluate(args):
    index, point, spec, data, train_cfg, patience = args
    t0 = time.perf_counter()
    model = build(spec)
    try:
        report, best_iter = train_with_validation(
            model, data.x_train, data.y_train, data.x_val, data.y_val, train_cfg, patience=patience
        )
        obj = objective_f1(predict_proba(model, data.x_val), data.y_val)
        failed = not np.isfinite(obj)
        rep = report.to_dict()
    except (NonFiniteLossError, FloatingPointError, np.linalg.LinAlgError):
        obj, best_iter, failed, rep = -np.inf, 0, True, {}
    return Trial(index, list(map(float, point)), spec, float(obj) if not failed else -np.inf,
                 time.perf_counter() - t0, int(best_iter), rep, failed)


@dataclass
class SearchResult:
    best: Trial
    trials: list
    parallel: bool = False

    @property
    def best_spec(self):
        return self.best.spec


def run_search(data, variant, config=None, log=None):
    """Random initial design followed by GP-EI proposals; returns a SearchResult.

    ``data`` is a prepared split (``datapipe.Prepared``). Trials train on the
    train rows with validation early stopping and score validation F1.
    """
    config = config or SearchConfig()
    space = space_for(variant)
    rng = np.random.default_rng(derive_seed(config.seed, "search"))
    n_in, M = data.n_features, data.n_classes
    trials: list[Trial] = []

    def make_args(points):
        out = []
        for p in points:
            idx = len(trials) + len(out)
            spec = decode(p, space, n_in, M, seed=derive_seed(config.seed, "init", idx))
            out.append((idx, p, spec, data, config.train, config.patience))
        return out

    def run_batch(points):
        args = make_args(points)
        if config.workers > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as ex:
                done = list(ex.map(_evaluate, args))
        else:
            done = [_evaluate(a) for a in args]
        for t in done:
            trials.append(t)
            if log:
                log(t)

    init = [snap(p, space) for p in rng.random((config.n_init, space.ndim))]
    run_batch(init)
    while len(trials) < config.n_trials:
        ok = [t for t in trials if not t.failed]
        batch = min(max(config.workers, 1), config.n_trials - len(trials))
        if len(ok) < 2:
            pts = [snap(p, space) for p in rng.random((batch, space.ndim))]
        else:
            gp = gp_fit([t.point for t in ok], [t.objective for t in ok])
            best = max(t.objective for t in ok)
            pts = propose_next(gp, space, config, rng, best=best, n=batch)
            pts = [pts] if batch == 1 else list(pts)
        run_batch(pts)

    ok = [t for t in trials if not t.failed]
    if not ok:
        raise RuntimeError("all search trials failed")
    best = max(ok, key=lambda t: (t.objective, -t.index))
    return SearchResult(best, trials, parallel=config.workers > 1)


def fit_final(spec, data, best_iter, train_cfg=None, lam=0.0):
    """Retrain ``spec`` on train+val for ``best_iter`` iterations; return (model, report)."""
    train_cfg = train_cfg or TrainConfig()
    cfg = TrainConfig(**{**asdict(train_cfg), "max_iter": max(int(best_iter), 1)})
    X, y = data.train_val()
    model = build(spec)
    report = train(model, X, y, cfg, lam)
    return model, report


def fit_protocol(spec, data, train_cfg=None, lam=0.0, patience=20):
    """Early-stop on validation loss, then retrain on train+val for that many steps.

    Returns ``(model, info)`` with the best iteration and both train reports.
    """
    train_cfg = train_cfg or TrainConfig(max_iter=300)
    probe = build(spec)
    rep1, best_iter = train_with_validation(
        probe, data.x_train, data.y_train, data.x_val, data.y_val, train_cfg, lam, patience
    )
    model, rep2 = fit_final(spec, data, best_iter, train_cfg, lam)
    return model, {"best_iter": best_iter, "search_report": rep1, "final_report": rep2}


def _inner_split(y, frac, rng):
    """Stratified holdout of ``frac`` of each class; returns (fit_idx, holdout_idx)."""
    fit, hold = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        n_hold = int(np.floor(frac * idx.size + 0.5)) if idx.size >= 3 else 0
        hold.append(idx[:n_hold])
        fit.append(idx[n_hold:])
    return np.sort(np.concatenate(fit)), np.sort(np.concatenate(hold))


def kfold_evaluate(ds, spec, K, seed=0, scale="standard", train_cfg=None, patience=20, holdout=0.1):
    """Stratified K-fold scores with a fixed spec.

    Each fold fits its scaler on the fold's training rows, early-stops on a
    stratified holdout carved from them, retrains on all of them for the
    chosen number of steps, and scores the held-out fold.
    """
    from .datapipe import Prepared, SplitPlan, apply_scaler, fit_scaler, stratified_kfold

    rng = np.random.default_rng(derive_seed(seed, "split"))
    folds = stratified_kfold(ds, K, derive_seed(seed, "split"))
    rows = []
    for f, (tr, va) in enumerate(folds):
        scaler = fit_scaler(ds.x[tr], scale)
        fit_idx, hold_idx = _inner_split(ds.y[tr], holdout, rng)
        Xs = apply_scaler(scaler, ds.x)
        fit_rows, hold_rows = tr[fit_idx], tr[hold_idx]
        data = Prepared(
            Xs[fit_rows], ds.y[fit_rows], Xs[hold_rows], ds.y[hold_rows], Xs[va], ds.y[va],
            scaler, SplitPlan(fit_rows, hold_rows, va, seed), list(ds.feature_names), ds.n_classes,
        )
        model, info = fit_protocol(spec, data, train_cfg, patience=patience)
        rep = metrics.evaluate(predict_proba(model, data.x_test), data.y_test)
        rows.append({"fold": f, "accuracy": rep.accuracy, "auc": rep.auc, "macro_f1": rep.macro_f1,
                     "best_iter": info["best_iter"]})
    acc = np.array([r["accuracy"] for r in rows])
    auc = np.array([r["auc"] for r in rows])
    summary = {"K": K, "accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std()),
               "auc_mean": float(np.mean(auc)), "auc_std": float(np.std(auc))}
    return rows, summary
