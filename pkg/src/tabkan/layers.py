"""KAN layer variants with analytic forward and backward passes.

Each layer owns a dict of named float64 arrays (``layer.params``) and exposes

* ``forward(X) -> (Y, cache)``
* ``backward(cache, dY) -> (grads, dX)`` where ``grads`` mirrors ``params``
* ``param_count()``

Positive scalars (the rational-map scale L and the fractional exponent nu) are
stored as their logarithms so unconstrained optimizers keep them positive.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .basis import (
    GaussianRbfBasis,
    bspline_eval_all,
    cheby_eval_all,
    jacobi_eval_all,
    rational_map,
)

PADE_DENOM_FLOOR = 1e-3
LAYER_NORM_EPS = 1e-5

__all__ = [
    "KANLayer",
    "ChebyLayer",
    "FourierLayer",
    "FastLayer",
    "PadeLayer",
    "JacobiRLayer",
    "FkanLayer",
    "SplineLayer",
    "LAYER_TYPES",
    "make_layer",
    "PADE_DENOM_FLOOR",
]


def _contract(F, W):
    """y[b,o] = sum_{i,k} F[b,i,k] W[i,o,k] as one matmul."""
    B, n_in, K = F.shape
    W2 = W.transpose(0, 2, 1).reshape(n_in * K, -1)
    return F.reshape(B, n_in * K) @ W2


def _contract_back(F, W, dY):
    B, n_in, K = F.shape
    n_out = W.shape[1]
    W2 = W.transpose(0, 2, 1).reshape(n_in * K, n_out)
    dW = (F.reshape(B, n_in * K).T @ dY).reshape(n_in, K, n_out).transpose(0, 2, 1)
    dF = (dY @ W2.T).reshape(B, n_in, K)
    return np.ascontiguousarray(dW), dF


class KANLayer:
    """Common plumbing: parameter bookkeeping and input validation."""

    variant = "base"
    param_names: tuple = ()

    def __init__(self, n_in, n_out):
        if n_in < 1 or n_out < 1:
            raise ValueError("layer widths must be positive")
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.params: dict[str, np.ndarray] = {}

    def hyperparams(self) -> dict:
        return {}

    def param_count(self) -> int:
        return int(sum(self.params[name].size for name in self.param_names))

    def zero_(self):
        for name in self.param_names:
            self.params[name][...] = 0.0
        return self

    def _check_input(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_in:
            raise ValueError(
                f"{self.variant} layer expects input of shape (B, {self.n_in}), got {X.shape}"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError(f"non-finite input to {self.variant} layer")
        return X

    def _check_grad(self, cache, dY):
        dY = np.asarray(dY, dtype=float)
        if dY.shape != (cache["B"], self.n_out):
            raise ValueError(
                f"stale cache: expected dY of shape {(cache['B'], self.n_out)}, got {dY.shape}"
            )
        return dY

    def __repr__(self):
        hp = ", ".join(f"{k}={v}" for k, v in self.hyperparams().items())
        return f"{type(self).__name__}({self.n_in}, {self.n_out}{', ' if hp else ''}{hp})"


class ChebyLayer(KANLayer):
    """tanh squash, Chebyshev features T_0..T_d, then an (i, k) contraction."""

    variant = "cheby"
    param_names = ("coeffs",)

    def __init__(self, n_in, n_out, order=4, rng=None):
        super().__init__(n_in, n_out)
        self.order = int(order)
        rng = np.random.default_rng(rng)
        std = 1.0 / np.sqrt(n_in * (order + 1))
        self.params["coeffs"] = rng.normal(0.0, std, (n_in, n_out, order + 1))

    def hyperparams(self):
        return {"order": self.order}

    def forward(self, X):
        X = self._check_input(X)
        t = np.tanh(X)
        T, dT = cheby_eval_all(t, self.order)
        Y = _contract(T, self.params["coeffs"])
        return Y, {"B": X.shape[0], "t": t, "T": T, "dT": dT}

    def backward(self, cache, dY):
        dY = self._check_grad(cache, dY)
        dW, dF = _contract_back(cache["T"], self.params["coeffs"], dY)
        dt = np.einsum("bik,bik->bi", dF, cache["dT"])
        return {"coeffs": dW}, dt * (1.0 - cache["t"] ** 2)


class FourierLayer(KANLayer):
    """sum_i sum_k W_cos cos(k x_i) + W_sin sin(k x_i) + b."""

    variant = "fourier"
    param_names = ("w_cos", "w_sin", "bias")

    def __init__(self, n_in, n_out, grid=3, rng=None):
        super().__init__(n_in, n_out)
        self.grid = int(grid)
        if self.grid < 1:
            raise ValueError("grid size must be >= 1")
        rng = np.random.default_rng(rng)
        std = 1.0 / np.sqrt(n_in * grid)
        self.params["w_cos"] = rng.normal(0.0, std, (n_in, n_out, grid))
        self.params["w_sin"] = rng.normal(0.0, std, (n_in, n_out, grid))
        self.params["bias"] = np.zeros(n_out)

    def hyperparams(self):
        return {"grid": self.grid}

    def forward(self, X):
        X = self._check_input(X)
        k = np.arange(1, self.grid + 1, dtype=float)
        kx = X[..., None] * k
        C, S = np.cos(kx), np.sin(kx)
        p = self.params
        Y = _contract(C, p["w_cos"]) + _contract(S, p["w_sin"]) + p["bias"]
        return Y, {"B": X.shape[0], "C": C, "S": S, "k": k}

    def backward(self, cache, dY):
        dY = self._check_grad(cache, dY)
        p = self.params
        dWc, dC = _contract_back(cache["C"], p["w_cos"], dY)
        dWs, dS = _contract_back(cache["S"], p["w_sin"], dY)
        k = cache["k"]
        dX = np.sum(k * (cache["C"] * dS - cache["S"] * dC), axis=-1)
        return {"w_cos": dWc, "w_sin": dWs, "bias": dY.sum(axis=0)}, dX


class FastLayer(KANLayer):
    """Layer norm, Gaussian RBF features on a fixed grid, linear mix."""

    variant = "fast"
    param_names = ("ln_gain", "ln_shift", "weights")

    def __init__(self, n_in, n_out, n_centers=8, rng=None):
        super().__init__(n_in, n_out)
        self.basis = GaussianRbfBasis.uniform(n_centers, -2.0, 2.0)
        self.n_centers = int(n_centers)
        rng = np.random.default_rng(rng)
        std = 1.0 / np.sqrt(n_in * n_centers)
        self.params["ln_gain"] = np.ones(n_in)
        self.params["ln_shift"] = np.zeros(n_in)
        self.params["weights"] = rng.normal(0.0, std, (n_in, n_centers, n_out))

    def hyperparams(self):
        return {"n_centers": self.n_centers}

    def forward(self, X):
        X = self._check_input(X)
        p = self.params
        mu = X.mean(axis=1, keepdims=True)
        xc = X - mu
        inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LAYER_NORM_EPS)
        xhat = xc * inv_std
        z = p["ln_gain"] * xhat + p["ln_shift"]
        phi, dphi = self.basis(z)
        B = X.shape[0]
        Y = phi.reshape(B, -1) @ p["weights"].reshape(-1, self.n_out)
        return Y, {"B": B, "xhat": xhat, "inv_std": inv_std, "phi": phi, "dphi": dphi}

    def backward(self, cache, dY):
        dY = self._check_grad(cache, dY)
        p = self.params
        B = cache["B"]
        phi = cache["phi"]
        W2 = p["weights"].reshape(-1, self.n_out)
        dW = (phi.reshape(B, -1).T @ dY).reshape(p["weights"].shape)
        dphi = (dY @ W2.T).reshape(phi.shape)
        dz = np.einsum("bic,bic->bi", dphi, cache["dphi"])
        xhat = cache["xhat"]
        dgain = (dz * xhat).sum(axis=0)
        dshift = dz.sum(axis=0)
        dxhat = dz * p["ln_gain"]
        dX = cache["inv_std"] * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return {"ln_gain": dgain, "ln_shift": dshift, "weights": dW}, dX


class PadeLayer(KANLayer):
    """Per-edge rational function P(u)/Q(u) in shifted Jacobi bases.

    Inputs go through a sigmoid to [0, 1] and are then shifted to [-1, 1].
    The denominator is floored to sign(Q) * max(|Q|, delta).
    """

    variant = "pade"
    param_names = ("num", "den")

    def __init__(self, n_in, n_out, degrees=(3, 3), alpha=1.0, beta=1.0, rng=None, floor=PADE_DENOM_FLOOR):
        super().__init__(n_in, n_out)
        q, k = (int(d) for d in degrees)
        self.degrees = (q, k)
        self.alpha, self.beta = float(alpha), float(beta)
        self.floor = float(floor)
        self.floor_hits = 0
        rng = np.random.default_rng(rng)
        self.params["num"] = rng.normal(0.0, 1.0 / np.sqrt(n_in * (q + 1)), (n_in, n_out, q + 1))
        den = rng.normal(0.0, 0.1 / np.sqrt(k + 1), (n_in, n_out, k + 1))
        # start near Q == 1 so ratios begin well away from the floor
        den[..., 0] = 1.0
        self.params["den"] = den

    def hyperparams(self):
        return {"degrees": list(self.degrees), "alpha": self.alpha, "beta": self.beta}

    def _bases(self, X):
        s = expit(X)
        u = 2.0 * s - 1.0
        q, k = self.degrees
        Jp, dJp = jacobi_eval_all(u, q, self.alpha, self.beta)
        if k == q:
            Jq, dJq = Jp, dJp
        else:
            Jq, dJq = jacobi_eval_all(u, k, self.alpha, self.beta)
        return s, Jp, dJp, Jq, dJq

    def edge_terms(self, X):
        """P and floored Q per (row, input, output) edge."""
        _, Jp, _, Jq, _ = self._bases(X)
        P = np.einsum("bij,ioj->bio", Jp, self.params["num"], optimize=True)
        Q = np.einsum("bij,ioj->bio", Jq, self.params["den"], optimize=True)
        return P, Q, self._floored(Q)

    def _floored(self, Q):
        sign = np.where(Q >= 0, 1.0, -1.0)
        return sign * np.maximum(np.abs(Q), self.floor)

    def forward(self, X):
        X = self._check_input(X)
        s, Jp, dJp, Jq, dJq = self._bases(X)
        num, den = self.params["num"], self.params["den"]
        P = np.einsum("bij,ioj->bio", Jp, num, optimize=True)
        Q = np.einsum("bij,ioj->bio", Jq, den, optimize=True)
        active = np.abs(Q) >= self.floor
        self.floor_hits += int(Q.size - np.count_nonzero(active))
        Qf = self._floored(Q)
        R = P / Qf
        cache = {"B": X.shape[0], "s": s, "Jp": Jp, "dJp": dJp, "Jq": Jq, "dJq": dJq,
                 "P": P, "Qf": Qf, "active": active}
        return R.sum(axis=1), cache

    def backward(self, cache, dY):
        dY = self._check_grad(cache, dY)
        num, den = self.params["num"], self.params["den"]
        Qf = cache["Qf"]
        dP = dY[:, None, :] / Qf
        dQ = np.where(cache["active"], -dP * cache["P"] / Qf, 0.0)
        dnum = np.einsum("bio,bij->ioj", dP, cache["Jp"], optimize=True)
        dden = np.einsum("bio,bij->ioj", dQ, cache["Jq"], optimize=True)
        Pd = np.einsum("bij,ioj->bio", cache["dJp"], num, optimize=True)
        Qd = np.einsum("bij,ioj->bio", cache["dJq"], den, optimize=True)
        du = (dP * Pd + dQ * Qd).sum(axis=2)
        s = cache["s"]
        return {"num": dnum, "den": dden}, du * 2.0 * s * (1.0 - s)


class JacobiRLayer(KANLayer):
    """Jacobi expansion of the rational map x / sqrt(x^2 + L^2), one L per layer."""

    variant = "jacobi_r"
    param_names = ("coeffs", "log_scale")

    def __init__(self, n_in, n_out, order=3, alpha=1.0, beta=1.0, rng=None):
        super().__init__(n_in, n_out)
        self.order = int(order)
        self.alpha, self.beta = float(alpha), float(beta)
        rng = np.random.default_rng(rng)
        std = 1.0 / np.sqrt(n_in * (order + 1))
        self.params["coeffs"] = rng.normal(0.0, std, (n_in, n_out, order + 1))
        self.params["log_scale"] = np.zeros(1)

    @property
    def scale(self):
        return float(np.exp(self.params["log_scale"][0]))

    def hyperparams(self):
        return {"order": self.order, "alpha": self.alpha, "beta": self.beta}

    def forward(self, X):
        X = self._check_input(X)
        L = self.scale
        phi, dphi_dx, dphi_dL = rational_map(X, L)
        J, dJ = jacobi_eval_all(phi, self.order, self.alpha, self.beta)
        Y = _contract(J, self.params["coeffs"])
        return Y, {"B": X.shape[0], "J": J, "dJ": dJ, "dx": dphi_dx, "dL": dphi_dL, "L": L}

    def backward(self, cache, dY):
        dY = self._check_grad(cache, dY)
        dW, dF = _contract_back(cache["J"], self.params["coeffs"], dY)
        dphi = np.einsum("bin,bin->bi", dF, cache["dJ"])
        dlog = cache["L"] * np.sum(dphi * cache["dL"])
        return {"coeffs": dW, "log_scale": np.array([dlog])}, dphi * cache["dx"]


class FkanLayer(KANLayer):
    """Linear map, then a fractional Jacobi activation per output unit.

    y_o = sum_n c[o, n] J_n(2 sigmoid(h_o)^nu - 1),  h = X W + b
    """

    variant = "fkan"
    param_names = ("weight", "bias", "coeffs", "log_nu")

    def __init__(self, n_in, n_out, order=3, alpha=1.0, beta=1.0, rng=None):
        super().__init__(n_in, n_out)
        self.order = int(order)
        self.alpha, self.beta = float(alpha), float(beta)
        rng = np.random.default_rng(rng)
        self.params["weight"] = rng.normal(0.0, 1.0 / np.sqrt(n_in), (n_in, n_out))
        self.params["bias"] = np.zeros(n_out)
        self.params["coeffs"] = rng.normal(0.0, 1.0 / np.sqrt(order + 1), (n_out, order + 1))
        self.params["log_nu"] = np.zeros(1)

    @property
    def nu(self):
        return float(np.exp(self.params["log_nu"][0]))

    def hyperparams(self):
        return {"order": self.order, "alpha": self.alpha, "beta": self.beta}

    def forward(self, X):
        X = self._check_input(X)
        p = self.params
        nu = self.nu
        h = X @ p["weight"] + p["bias"]
        s = expit(h)
        log_s = -np.logaddexp(0.0, -h)
        z = np.exp(nu * log_s)
        J, dJ = jacobi_eval_all(2.0 * z - 1.0, self.order, self.alpha, self.beta)
        Y = np.einsum("bon,on->bo", J, p["coeffs"])
        return Y, {"B": X.shape[0], "X": X, "s": s, "log_s": log_s, "z": z, "J": J, "dJ": dJ, "nu": nu}

    def backward(self, cache, dY):
        dY = self._check_grad(cache, dY)
        p = self.params
        nu, z, s = cache["nu"], cache["z"], cache["s"]
        dcoeffs = np.einsum("bo,bon->on", dY, cache["J"])
        dz = 2.0 * dY * np.einsum("bon,on->bo", cache["dJ"], p["coeffs"])
        dnu = np.sum(dz * z * cache["log_s"])
        dh = dz * nu * z * (1.0 - s)
        grads = {
            "weight": cache["X"].T @ dh,
            "bias": dh.sum(axis=0),
            "coeffs": dcoeffs,
            "log_nu": np.array([nu * dnu]),
        }
        return grads, dh @ p["weight"].T


def _silu(x):
    s = expit(x)
    return x * s, s * (1.0 + x * (1.0 - s))


class SplineLayer(KANLayer):
    """Original KAN edge: cubic B-spline on [-1, 1] plus a SiLU residual."""

    variant = "spline"
    param_names = ("coeffs", "base")

    def __init__(self, n_in, n_out, grid=5, spline_order=3, rng=None):
        super().__init__(n_in, n_out)
        self.grid = int(grid)
        self.spline_order = int(spline_order)
        rng = np.random.default_rng(rng)
        self.params["coeffs"] = rng.normal(0.0, 0.1, (n_in, n_out, grid + spline_order))
        self.params["base"] = np.full((n_in, n_out), 1.0 / np.sqrt(n_in))

    def hyperparams(self):
        return {"grid": self.grid, "spline_order": self.spline_order}

    def forward(self, X):
        X = self._check_input(X)
        Bs, dBs = bspline_eval_all(X, self.grid, self.spline_order)
        act, dact = _silu(X)
        Y = _contract(Bs, self.params["coeffs"]) + act @ self.params["base"]
        return Y, {"B": X.shape[0], "Bs": Bs, "dBs": dBs, "act": act, "dact": dact}

    def backward(self, cache, dY):
        dY = self._check_grad(cache, dY)
        dW, dF = _contract_back(cache["Bs"], self.params["coeffs"], dY)
        dbase = cache["act"].T @ dY
        dX = np.einsum("bik,bik->bi", dF, cache["dBs"]) + (dY @ self.params["base"].T) * cache["dact"]
        return {"coeffs": dW, "base": dbase}, dX


LAYER_TYPES = {
    cls.variant: cls
    for cls in (ChebyLayer, FourierLayer, FastLayer, PadeLayer, JacobiRLayer, FkanLayer, SplineLayer)
}


def make_layer(variant, n_in, n_out, rng=None, **hyper):
    try:
        cls = LAYER_TYPES[variant]
    except KeyError:
        raise ValueError(f"unknown layer variant {variant!r}") from None
    if "degrees" in hyper:
        hyper["degrees"] = tuple(hyper["degrees"])
    return cls(n_in, n_out, rng=rng, **hyper)
