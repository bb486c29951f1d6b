"""Univariate basis families shared by the KAN layers.

Every evaluator is vectorized: ``x`` may be a scalar or an array of any shape,
and families that return all orders at once append a trailing axis of length
``order + 1``. Values and first derivatives are returned together so the layer
backward passes never need finite differences.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import poch, gammaln

__all__ = [
    "ChebyshevBasis",
    "GaussianRbfBasis",
    "FourierBasis",
    "JacobiBasis",
    "FractionalJacobiBasis",
    "RationalMap",
    "BSplineBasis",
    "cheby_eval_all",
    "rbf_eval",
    "jacobi_eval",
    "jacobi_eval_all",
    "frac_jacobi_eval",
    "rational_map",
    "bspline_knots",
    "bspline_eval_all",
    "clamp_count",
]

_CLAMP_TOL = 1e-12
_clamp_lock = threading.Lock()
_clamp_total = 0


def clamp_count() -> int:
    """Number of Chebyshev inputs clamped into [-1, 1] since import."""
    return _clamp_total


def _record_clamps(n: int) -> None:
    global _clamp_total
    if n:
        with _clamp_lock:
            _clamp_total += n


@dataclass(frozen=True)
class ChebyshevBasis:
    degree: int

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be >= 0")

    def __call__(self, x):
        return cheby_eval_all(x, self.degree)


@dataclass(frozen=True)
class GaussianRbfBasis:
    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim != 1 or c.size == 0 or np.any(np.diff(c) <= 0):
            raise ValueError("centers must be a strictly increasing 1-D array")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "centers", c)

    @classmethod
    def uniform(cls, n_centers=8, lo=-2.0, hi=2.0):
        centers = np.linspace(lo, hi, n_centers)
        h = (hi - lo) / (n_centers - 1) if n_centers > 1 else 1.0
        return cls(centers, h)

    def __call__(self, x):
        """Return (values, d/dx) with a trailing center axis."""
        r = np.asarray(x, dtype=float)[..., None] - self.centers
        return rbf_eval(r, self.bandwidth)


@dataclass(frozen=True)
class FourierBasis:
    grid: int

    def __post_init__(self):
        if self.grid < 1:
            raise ValueError("grid size must be >= 1")

    def __call__(self, x):
        """cos(kx), sin(kx) for k = 1..grid, each with a trailing k axis."""
        k = np.arange(1, self.grid + 1, dtype=float)
        kx = np.asarray(x, dtype=float)[..., None] * k
        return np.cos(kx), np.sin(kx)


@dataclass(frozen=True)
class JacobiBasis:
    order: int
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if not (self.alpha > -1 and self.beta > -1):
            raise ValueError("alpha and beta must both exceed -1")

    def __call__(self, x):
        return jacobi_eval_all(x, self.order, self.alpha, self.beta)


@dataclass(frozen=True)
class FractionalJacobiBasis(JacobiBasis):
    nu: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if not self.nu > 0:
            raise ValueError("nu must be positive")


@dataclass(frozen=True)
class RationalMap:
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("L must be positive")

    def __call__(self, x):
        return rational_map(x, self.scale)


@dataclass(frozen=True)
class BSplineBasis:
    grid: int
    order: int = 3
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.grid < 1 or self.order < 0:
            raise ValueError("grid must be >= 1 and order >= 0")

    @property
    def knots(self):
        return bspline_knots(self.grid, self.order, self.lo, self.hi)

    @property
    def n_basis(self):
        return self.grid + self.order

    def __call__(self, x):
        return bspline_eval_all(x, self.grid, self.order, self.lo, self.hi)


# --------------------------------------------------------------------------
# Chebyshev


def cheby_eval_all(x, d):
    """T_0..T_d and their derivatives by the three-term recurrence.

    Inputs slightly outside [-1, 1] are clamped and counted; callers feed
    tanh-squashed values so this only guards round-off.
    """
    if d < 0:
        raise ValueError("degree must be >= 0")
    x = np.asarray(x, dtype=float)
    outside = np.abs(x) > 1.0 + _CLAMP_TOL
    if np.any(outside):
        _record_clamps(int(np.count_nonzero(outside)))
        x = np.clip(x, -1.0, 1.0)
    vals = np.empty(x.shape + (d + 1,))
    ders = np.empty_like(vals)
    vals[..., 0] = 1.0
    ders[..., 0] = 0.0
    if d >= 1:
        vals[..., 1] = x
        ders[..., 1] = 1.0
    for k in range(2, d + 1):
        vals[..., k] = 2.0 * x * vals[..., k - 1] - vals[..., k - 2]
        ders[..., k] = 2.0 * vals[..., k - 1] + 2.0 * x * ders[..., k - 1] - ders[..., k - 2]
    return vals, ders


# --------------------------------------------------------------------------
# Gaussian RBF


def rbf_eval(r, h):
    """phi(r) = exp(-r^2 / 2h^2) and d phi / dr."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    r = np.asarray(r, dtype=float)
    phi = np.exp(-0.5 * (r / h) ** 2)
    return phi, -(r / (h * h)) * phi


# --------------------------------------------------------------------------
# Jacobi


def _check_ab(alpha, beta):
    if not (alpha > -1 and beta > -1):
        raise ValueError("alpha and beta must both exceed -1")


def _gbinom(top, k):
    # generalized binomial C(top, k) for integer k >= 0
    return poch(top - k + 1.0, k) / np.exp(gammaln(k + 1.0))


def jacobi_eval(n, alpha, beta, x):
    """J_n^(alpha, beta)(x) from the explicit binomial sum, with derivative.

    J_n(x) = sum_s C(n+a, n-s) C(n+b, s) ((x-1)/2)^s ((x+1)/2)^(n-s)

    The derivative uses d/dx J_n^(a,b) = (n+a+b+1)/2 * J_{n-1}^(a+1,b+1).
    """
    _check_ab(alpha, beta)
    if n < 0:
        raise ValueError("order must be >= 0")
    x = np.asarray(x, dtype=float)
    return _jacobi_sum(n, alpha, beta, x), _jacobi_sum_deriv(n, alpha, beta, x)


def _jacobi_sum(n, a, b, x):
    if n == 0:
        return np.ones_like(x)
    lo = 0.5 * (x - 1.0)
    hi = 0.5 * (x + 1.0)
    total = np.zeros_like(x)
    for s in range(n + 1):
        coef = _gbinom(n + a, n - s) * _gbinom(n + b, s)
        total = total + coef * lo**s * hi ** (n - s)
    return total


def _jacobi_sum_deriv(n, a, b, x):
    if n == 0:
        return np.zeros_like(x)
    return 0.5 * (n + a + b + 1.0) * _jacobi_sum(n - 1, a + 1.0, b + 1.0, x)


def _jacobi_recurrence(x, order, a, b):
    vals = np.empty(x.shape + (order + 1,))
    vals[..., 0] = 1.0
    if order >= 1:
        vals[..., 1] = 0.5 * (a - b) + 0.5 * (a + b + 2.0) * x
    for n in range(2, order + 1):
        c = 2.0 * n + a + b
        a1 = 2.0 * n * (n + a + b) * (c - 2.0)
        a2 = (c - 1.0) * (a * a - b * b)
        a3 = (c - 1.0) * c * (c - 2.0)
        a4 = 2.0 * (n + a - 1.0) * (n + b - 1.0) * c
        vals[..., n] = ((a2 + a3 * x) * vals[..., n - 1] - a4 * vals[..., n - 2]) / a1
    return vals


def jacobi_eval_all(x, order, alpha=1.0, beta=1.0):
    """J_0..J_order via the three-term recurrence, plus derivatives.

    Derivatives come from the parameter-shifted family, also by recurrence.
    """
    _check_ab(alpha, beta)
    x = np.asarray(x, dtype=float)
    vals = _jacobi_recurrence(x, order, alpha, beta)
    ders = np.zeros_like(vals)
    if order >= 1:
        shifted = _jacobi_recurrence(x, order - 1, alpha + 1.0, beta + 1.0)
        n = np.arange(1, order + 1, dtype=float)
        ders[..., 1:] = 0.5 * (n + alpha + beta + 1.0) * shifted
    return vals, ders


def frac_jacobi_eval(n, alpha, beta, nu, x):
    """J_n^(a,b)(2 x^nu - 1) on x in [0, 1].

    Returns (value, d/dx, d/dnu). x^nu * ln x is taken as 0 at x = 0.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    x = np.asarray(x, dtype=float)
    xnu = np.power(x, nu)
    val, dj = jacobi_eval(n, alpha, beta, 2.0 * xnu - 1.0)
    with np.errstate(divide="ignore"):
        dxnu_dx = nu * np.power(x, nu - 1.0)
    log_x = np.log(np.where(x > 0, x, 1.0))
    dxnu_dnu = xnu * log_x
    return val, 2.0 * dj * dxnu_dx, 2.0 * dj * dxnu_dnu


# --------------------------------------------------------------------------
# rational map


def rational_map(x, L):
    """phi = x / sqrt(x^2 + L^2) with d phi/dx and d phi/dL."""
    if not L > 0:
        raise ValueError("L must be positive")
    x = np.asarray(x, dtype=float)
    r2 = x * x + L * L
    r = np.sqrt(r2)
    phi = x / r
    r3 = r2 * r
    return phi, (L * L) / r3, -(x * L) / r3


# --------------------------------------------------------------------------
# B-splines


def bspline_knots(grid, order=3, lo=-1.0, hi=1.0):
    """Uniform knots over [lo, hi] extended by ``order`` intervals each side."""
    h = (hi - lo) / grid
    return lo + h * np.arange(-order, grid + order + 1, dtype=float)


def _cox_de_boor(x, t, k):
    # x already clamped to [t[k], t[-k-1]]; returns list of arrays per level
    n0 = len(t) - 1
    xe = x[..., None]
    B = ((xe >= t[:-1]) & (xe < t[1:])).astype(float)
    # right endpoint of the domain belongs to the last interior interval
    at_end = x >= t[n0 - k]
    if np.any(at_end):
        B[at_end] = 0.0
        B[at_end, n0 - k - 1] = 1.0
    levels = [B]
    for p in range(1, k + 1):
        left_den = t[p:-1] - t[: -p - 1]
        right_den = t[p + 1 :] - t[1:-p]
        prev = levels[-1]
        left = (xe - t[: -p - 1]) / left_den * prev[..., :-1]
        right = (t[p + 1 :] - xe) / right_den * prev[..., 1:]
        levels.append(left + right)
    return levels


def bspline_eval_all(x, grid, order=3, lo=-1.0, hi=1.0):
    """Cox-de Boor values of the grid+order B-splines and their derivatives.

    x is clamped to [lo, hi]; the derivative is zero where clamping applied.
    """
    t = bspline_knots(grid, order, lo, hi)
    x = np.asarray(x, dtype=float)
    inside = (x >= lo) & (x <= hi)
    xc = np.clip(x, lo, hi)
    levels = _cox_de_boor(xc, t, order)
    vals = levels[order]
    if order == 0:
        return vals, np.zeros_like(vals)
    lower = levels[order - 1]
    k = order
    left_den = t[k:-1] - t[: -k - 1]
    right_den = t[k + 1 :] - t[1:-k]
    ders = k * (lower[..., :-1] / left_den - lower[..., 1:] / right_den)
    ders = np.where(inside[..., None], ders, 0.0)
    return vals, ders
