"""L-BFGS with a strong Wolfe line search, and a plain SGD step."""

from __future__ import annotations

import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import NonFiniteLossError, flatten, loss_and_grad, unflatten

__all__ = [
    "TrainConfig",
    "TrainReport",
    "LbfgsState",
    "LineSearchFailure",
    "lbfgs_direction",
    "wolfe_line_search",
    "lbfgs_minimize",
    "train",
    "train_with_validation",
    "sgd_step",
]

CURVATURE_EPS = 1e-10
FLAT_TOL = 1e-11


@dataclass
class TrainConfig:
    max_iter: int = 500
    gtol: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 25
    history: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("line-search constants must satisfy 0 < c1 < c2 < 1")
        if self.history < 1 or self.max_iter < 0:
            raise ValueError("history must be >= 1 and max_iter >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    iterations: int
    final_loss: float
    grad_norm: float
    wall_time: float
    stop_reason: str
    n_evals: int = 0
    step_failures: int = 0
    loss_history: list = field(default_factory=list)

    def to_dict(self, with_history=False):
        d = asdict(self)
        if not with_history:
            d.pop("loss_history")
        return d


class LineSearchFailure(RuntimeError):
    """No point satisfying the sufficient-decrease condition was found."""


class LbfgsState:
    """Curvature pairs (s_k, y_k) for the two-loop recursion."""

    def __init__(self, m=10):
        self.m = int(m)
        self.pairs = deque(maxlen=self.m)
        self.iteration = 0

    def __len__(self):
        return len(self.pairs)

    def update(self, s, y):
        """Store (s, y) if it satisfies the curvature condition; return whether stored."""
        sy = float(s @ y)
        if not sy > CURVATURE_EPS:
            return False
        self.pairs.append((s.copy(), y.copy(), 1.0 / sy))
        return True

    def reset(self):
        self.pairs.clear()

    @property
    def gamma(self):
        if not self.pairs:
            return 1.0
        s, y, rho = self.pairs[-1]
        return float((s @ y) / (y @ y))


def lbfgs_direction(state, grad):
    """-H grad by the two-loop recursion with H_0 = gamma I."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(state.pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    r = state.gamma * q
    for (s, y, rho), a in zip(state.pairs, reversed(alphas)):
        b = rho * (y @ r)
        r += (a - b) * s
    return -r


def _interpolate(a_lo, a_hi, f_lo, f_hi, d_lo, d_hi):
    """Cubic minimizer on [a_lo, a_hi] with bisection safeguard."""
    lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
    width = hi - lo
    if np.isfinite(f_hi) and np.isfinite(d_hi):
        d1 = d_lo + d_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
        disc = d1 * d1 - d_lo * d_hi
        if disc >= 0:
            d2 = np.copysign(np.sqrt(disc), a_hi - a_lo)
            denom = d_hi - d_lo + 2.0 * d2
            if denom != 0:
                a = a_hi - (a_hi - a_lo) * (d_hi + d2 - d1) / denom
                if lo + 0.1 * width <= a <= hi - 0.1 * width:
                    return a
    return 0.5 * (a_lo + a_hi)


def wolfe_line_search(fun, x, f0, g0, direction, c1=1e-4, c2=0.9, alpha0=1.0, max_steps=25):
    """Bracketing/zoom search for a step satisfying the strong Wolfe conditions.

    ``fun(x) -> (f, g)``. Non-finite trial values count as +inf. Returns
    ``(alpha, f, g, n_evals)``. If the budget runs out the best Armijo point
    is returned; if there is none, ``LineSearchFailure`` is raised.

    When f changes by less than its round-off level the Armijo test is
    replaced by the approximate form phi'(a) <= (2 c1 - 1) phi'(0), which
    stays meaningful near a minimizer.
    """
    dphi0 = float(g0 @ direction)
    if not dphi0 < 0:
        raise LineSearchFailure("direction is not a descent direction")
    n_evals = 0
    best = None
    eps_f = FLAT_TOL * max(abs(f0), 1.0)

    def flat(f):
        return abs(f - f0) <= eps_f

    def sufficient(a, f, d):
        return f <= f0 + c1 * a * dphi0 or (flat(f) and d <= (2.0 * c1 - 1.0) * dphi0)

    def worse(a, f, d, f_ref):
        return not sufficient(a, f, d) or (f >= f_ref and not flat(f))

    def phi(a):
        nonlocal n_evals, best
        n_evals += 1
        try:
            f, g = fun(x + a * direction)
        except NonFiniteLossError:
            return np.inf, None, np.nan
        f = float(f)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, None, np.nan
        d = float(g @ direction)
        if sufficient(a, f, d) and (best is None or f < best[1]):
            best = (a, f, g)
        return f, g, d

    def zoom(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi, budget):
        for _ in range(budget):
            a = _interpolate(a_lo, a_hi, f_lo, f_hi, d_lo, d_hi)
            f, g, d = phi(a)
            if worse(a, f, d, f_lo):
                a_hi, f_hi, d_hi = a, f, d
            else:
                if abs(d) <= -c2 * dphi0:
                    return a, f, g
                if d * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
                a_lo, f_lo, d_lo = a, f, d
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = alpha0
    found = None
    for i in range(max_steps):
        f, g, d = phi(a)
        if not sufficient(a, f, d) or (i > 0 and worse(a, f, d, f_prev)):
            found = zoom(a_prev, f_prev, d_prev, a, f, d, max_steps)
            break
        if abs(d) <= -c2 * dphi0:
            found = (a, f, g)
            break
        if d >= 0:
            found = zoom(a, f, d, a_prev, f_prev, d_prev, max_steps)
            break
        a_prev, f_prev, d_prev = a, f, d
        a *= 2.0
    if found is not None:
        return found[0], found[1], found[2], n_evals
    if best is not None:
        return best[0], best[1], best[2], n_evals
    raise LineSearchFailure("no sufficient-decrease point within the step budget")


def lbfgs_minimize(fun, x0, config=None, callback=None):
    """Minimize ``fun(x) -> (f, g)`` from ``x0``.

    ``callback(k, x, f, g)`` runs after each accepted step; returning True
    stops the run. Returns ``(x, f, g, TrainReport)``.
    """
    config = config or TrainConfig()
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    f = float(f)
    if not np.isfinite(f):
        raise NonFiniteLossError("non-finite loss at iteration 0")
    n_evals = 1
    state = LbfgsState(config.history)
    history = [f]
    failures = 0
    reason = "max_iter"
    k = 0
    while True:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < config.gtol:
            reason = "gtol"
            break
        if k >= config.max_iter:
            break
        if len(state) == 0:
            d = -g
            alpha0 = min(1.0, 1.0 / np.sum(np.abs(g)))
        else:
            d = lbfgs_direction(state, g)
            alpha0 = 1.0
        try:
            alpha, f_new, g_new, ne = wolfe_line_search(
                fun, x, f, g, d, config.c1, config.c2, alpha0, config.max_ls
            )
        except LineSearchFailure:
            failures += 1
            if failures > 1 or len(state) == 0:
                reason = "line_search_failure"
                break
            state.reset()
            continue
        n_evals += ne
        step = alpha * d
        x_new = x + step
        state.update(x_new - x, g_new - g)
        x, f, g = x_new, float(f_new), g_new
        k += 1
        state.iteration = k
        failures = 0
        history.append(f)
        if callback is not None and callback(k, x, f, g):
            reason = "callback"
            break
    report = TrainReport(
        iterations=k,
        final_loss=f,
        grad_norm=float(np.max(np.abs(g))) if g.size else 0.0,
        wall_time=time.perf_counter() - t0,
        stop_reason=reason,
        n_evals=n_evals,
        step_failures=failures,
        loss_history=history,
    )
    return x, f, g, report


def train(model, X, y, config=None, lam=0.0, callback=None):
    """Full-batch L-BFGS on the cross-entropy (+ smoothness) objective.

    Frozen parameters receive zero gradient and therefore zero step.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y row counts differ")

    def fun(theta):
        unflatten(model, theta)
        return loss_and_grad(model, X, y, lam)

    theta, _, _, report = lbfgs_minimize(fun, flatten(model), config, callback)
    unflatten(model, theta)
    return report


def sgd_step(params, grad, lr, frozen=None):
    """In-place theta <- theta - lr * grad on unfrozen entries."""
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    step = lr * np.asarray(grad, dtype=float)
    if frozen is not None:
        step = np.where(frozen, 0.0, step)
    params -= step
    return params


def train_with_validation(model, X, y, X_val, y_val, config=None, lam=0.0, patience=20):
    """L-BFGS on (X, y) while tracking validation cross-entropy.

    Stops after ``patience`` iterations without a new validation minimum and
    restores the best parameters. Returns ``(report, best_iter)`` where
    ``best_iter`` counts accepted steps (0 means the initial point).
    """
    from .network import predict_logits
    from scipy.special import log_softmax

    y_val = np.asarray(y_val, dtype=int)

    def val_loss():
        try:
            logp = log_softmax(predict_logits(model, X_val), axis=1)
        except NonFiniteLossError:
            return np.inf
        return -float(np.mean(logp[np.arange(y_val.size), y_val]))

    best = {"loss": val_loss(), "iter": 0, "theta": flatten(model)}

    def callback(k, theta, f, g):
        unflatten(model, theta)
        v = val_loss()
        if v < best["loss"]:
            best.update(loss=v, iter=k, theta=theta.copy())
        return k - best["iter"] >= patience

    report = train(model, X, y, config, lam, callback)
    unflatten(model, best["theta"])
    return report, best["iter"]
