"""Edge-function reconstruction, feature importance, high-order energy, smoothness penalty."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import cheby_eval_all, jacobi_eval_all
from .layers import PADE_DENOM_FLOOR, ChebyLayer, FourierLayer, PadeLayer

__all__ = [
    "EdgeFunction",
    "extract_edge_function",
    "sample_curve",
    "original_units",
    "write_curve_csv",
    "write_curve_svg",
    "ImportanceVector",
    "feature_importance",
    "write_importance_csv",
    "EnergyReport",
    "high_order_energy",
    "smoothness_penalty",
    "top_k_retrain",
    "lambda_sweep",
]

HIGH_ORDER_START = 3


@dataclass
class EdgeFunction:
    """Univariate map on one (input i, output o) connection of a layer.

    ``coeffs`` holds c_k (cheby), rows (a_k, b_k) for k = 1..K (fourier), or
    the numerator then denominator vectors (pade, see ``split``).
    """

    layer: int
    feature: int
    output: int
    family: str
    coeffs: np.ndarray
    domain: tuple
    split: int = 0
    alpha: float = 1.0
    beta: float = 1.0
    floor: float = PADE_DENOM_FLOOR

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "cheby":
            T, _ = cheby_eval_all(np.clip(x, -1.0, 1.0), len(self.coeffs) - 1)
            return T @ self.coeffs
        if self.family == "fourier":
            k = np.arange(1, self.coeffs.shape[0] + 1)
            kx = x[..., None] * k
            return np.cos(kx) @ self.coeffs[:, 0] + np.sin(kx) @ self.coeffs[:, 1]
        num, den = self.coeffs[: self.split], self.coeffs[self.split :]
        u = 2.0 * np.clip(x, 0.0, 1.0) - 1.0
        P = jacobi_eval_all(u, len(num) - 1, self.alpha, self.beta)[0] @ num
        Q = jacobi_eval_all(u, len(den) - 1, self.alpha, self.beta)[0] @ den
        Qf = np.where(Q >= 0, 1.0, -1.0) * np.maximum(np.abs(Q), self.floor)
        return P / Qf


def extract_edge_function(model, layer, i, o):
    lyr = model.layers[layer]
    if isinstance(lyr, ChebyLayer):
        return EdgeFunction(layer, i, o, "cheby", lyr.params["coeffs"][i, o].copy(), (-1.0, 1.0))
    if isinstance(lyr, FourierLayer):
        ab = np.stack([lyr.params["w_cos"][i, o], lyr.params["w_sin"][i, o]], axis=1)
        return EdgeFunction(layer, i, o, "fourier", ab, (-math.pi, math.pi))
    if isinstance(lyr, PadeLayer):
        num, den = lyr.params["num"][i, o], lyr.params["den"][i, o]
        return EdgeFunction(
            layer, i, o, "pade", np.concatenate([num, den]), (0.0, 1.0),
            split=num.size, alpha=lyr.alpha, beta=lyr.beta, floor=lyr.floor,
        )
    raise ValueError(f"edge reconstruction is not defined for {lyr.variant} layers")


def sample_curve(edge, n_points=200):
    """(n_points, 2) array of (x, f(x)) on a uniform grid over the edge domain."""
    if n_points < 2:
        raise ValueError("need at least two points")
    x = np.linspace(edge.domain[0], edge.domain[1], n_points)
    return np.column_stack([x, edge(x)])


def original_units(edge, x, scaler):
    """Map edge-domain x of a first-layer edge back to raw feature units."""
    x = np.asarray(x, dtype=float)
    if edge.family == "cheby":
        z = np.arctanh(np.clip(x, -1 + 1e-12, 1 - 1e-12))
    elif edge.family == "pade":
        s = np.clip(x, 1e-12, 1 - 1e-12)
        z = np.log(s) - np.log1p(-s)
    else:
        z = x
    n = len(scaler.mean) if scaler.mean is not None else len(scaler.ref_values or [])
    if scaler.mode == "raw":
        return z
    Z = np.zeros((z.size, n))
    Z[:, edge.feature] = z
    return scaler.inverse(Z)[:, edge.feature]


def write_curve_csv(edge, path, n_points=200, scaler=None):
    pts = sample_curve(edge, n_points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if scaler is None:
            w.writerow(["x", "f"])
            w.writerows(pts.tolist())
        else:
            raw = original_units(edge, pts[:, 0], scaler)
            w.writerow(["x", "x_original", "f"])
            w.writerows(np.column_stack([pts[:, 0], raw, pts[:, 1]]).tolist())


def write_curve_svg(edge, path, n_points=200, size=(320, 200), title=None):
    """Standalone SVG polyline of the sampled curve."""
    pts = sample_curve(edge, n_points)
    W, H = size
    pad = 20
    x, y = pts[:, 0], pts[:, 1]
    ylo, yhi = float(y.min()), float(y.max())
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    px = pad + (x - x[0]) / (x[-1] - x[0]) * (W - 2 * pad)
    py = H - pad - (y - ylo) / (yhi - ylo) * (H - 2 * pad)
    poly = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    label = title or f"layer {edge.layer} edge {edge.feature}->{edge.output} ({edge.family})"
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
        f'<rect width="{W}" height="{H}" fill="white"/>\n'
        f'<text x="{pad}" y="14" font-size="11" font-family="sans-serif">{label}</text>\n'
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{poly}"/>\n'
        "</svg>\n"
    )
    with open(path, "w") as fh:
        fh.write(svg)


@dataclass
class ImportanceVector:
    scores: np.ndarray
    feature_names: list = field(default_factory=list)
    aggregation: str = "sum of absolute coefficients over outputs and orders"

    def ranking(self):
        """Feature indices by descending score, lower index first on ties."""
        return np.lexsort((np.arange(self.scores.size), -self.scores))


def feature_importance(model, feature_names=None):
    first = model.layers[0]
    if isinstance(first, ChebyLayer):
        scores = np.abs(first.params["coeffs"]).sum(axis=(1, 2))
    elif isinstance(first, FourierLayer):
        scores = (np.abs(first.params["w_cos"]) + np.abs(first.params["w_sin"])).sum(axis=(1, 2))
    else:
        raise ValueError(f"feature importance is not defined for a {first.variant} first layer")
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(scores.size)]
    return ImportanceVector(scores, names)


def write_importance_csv(imp, path):
    rank = np.empty(imp.scores.size, dtype=int)
    rank[imp.ranking()] = np.arange(1, imp.scores.size + 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_name", "score", "rank"])
        for name, s, r in sorted(zip(imp.feature_names, imp.scores, rank), key=lambda t: t[2]):
            w.writerow([name, repr(float(s)), int(r)])


def _order_mass(layer):
    """Squared coefficient mass per (input, output, order) and the order indices."""
    if isinstance(layer, ChebyLayer):
        c = layer.params["coeffs"]
        return c * c, np.arange(c.shape[-1])
    if isinstance(layer, FourierLayer):
        a, b = layer.params["w_cos"], layer.params["w_sin"]
        return a * a + b * b, np.arange(1, a.shape[-1] + 1)
    return None, None


@dataclass
class EnergyReport:
    energy: float
    per_layer: list
    per_edge: list
    lam: float = 0.0

    def to_dict(self):
        return {"energy": self.energy, "per_layer": self.per_layer, "lam": self.lam}


def high_order_energy(model, lam=0.0):
    """Share of squared coefficient mass at orders (or frequencies) >= 3.

    ``energy`` is nan when every coefficient is zero.
    """
    num = den = 0.0
    per_layer, per_edge = [], []
    for layer in model.layers:
        mass, k = _order_mass(layer)
        if mass is None:
            raise ValueError(f"high-order energy is not defined for {layer.variant} layers")
        hi = mass[..., k >= HIGH_ORDER_START].sum(axis=-1)
        tot = mass.sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_edge.append(np.where(tot > 0, hi / np.where(tot > 0, tot, 1.0), np.nan))
        num += float(hi.sum())
        den += float(tot.sum())
        per_layer.append(float(hi.sum() / tot.sum()) if tot.sum() > 0 else float("nan"))
    energy = num / den if den > 0 else float("nan")
    return EnergyReport(energy, per_layer, per_edge, lam)


def smoothness_penalty(model, lam):
    """lam * sum_edges sum_k k^2 c_k^2 and its gradient in flat-parameter order."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    grads = []
    value = 0.0
    for layer in model.layers:
        if lam and not isinstance(layer, (ChebyLayer, FourierLayer)):
            raise ValueError(f"the smoothness penalty is not defined for {layer.variant} layers")
        for name in layer.param_names:
            p = layer.params[name]
            if name in ("coeffs", "w_cos", "w_sin") and isinstance(layer, (ChebyLayer, FourierLayer)):
                k = np.arange(p.shape[-1]) + (1 if isinstance(layer, FourierLayer) else 0)
                w = (k * k).astype(float)
                value += lam * float(np.sum(w * p * p))
                grads.append((2.0 * lam * w * p).ravel())
            else:
                grads.append(np.zeros(p.size))
    return value, np.concatenate(grads) if grads else np.zeros(0)


def top_k_retrain(data, spec, fractions, train_cfg=None, patience=20, lam=0.0):
    """Test AUC after retraining on the top share of features for each fraction.

    Importance comes from a model trained on all features with the same
    protocol; the fraction-1.0 row reuses that run. Returns a list of dicts.
    """
    from . import metrics
    from .nas import fit_protocol
    from .network import NetworkSpec, predict_proba

    fractions = [float(f) for f in fractions]
    n0 = data.n_features
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError("fractions must lie in (0, 1]")
        if int(round(f * n0)) < 1:
            raise ValueError(f"fraction {f} keeps no features")

    def score(model, d):
        p = predict_proba(model, d.x_test)
        return metrics.roc_auc(p[:, 1], d.y_test) if d.n_classes == 2 else metrics.accuracy(p.argmax(1), d.y_test)

    full_model, _ = fit_protocol(spec, data, train_cfg, lam=lam, patience=patience)
    imp = feature_importance(full_model, data.feature_names)
    order = imp.ranking()
    base = score(full_model, data)
    rows = []
    for f in sorted(fractions, reverse=True):
        k = int(round(f * n0))
        if k == n0:
            rows.append({"fraction": f, "n_features": k, "auc": base})
            continue
        cols = np.sort(order[:k])
        sub = data.select_features(cols)
        sub_spec = NetworkSpec(spec.variant, [k] + spec.widths[1:], spec.hyper, spec.seed)
        model, _ = fit_protocol(sub_spec, sub, train_cfg, lam=lam, patience=patience)
        rows.append({"fraction": f, "n_features": k, "auc": score(model, sub)})
    rows.sort(key=lambda r: r["fraction"])
    return rows


def lambda_sweep(data, spec, lams, train_cfg=None):
    """Train on train+val to convergence for each lambda; report test metrics and energy.

    The penalty is the only regularizer here, so no early stopping is used.
    """
    from . import metrics
    from .network import build, predict_proba
    from .optim import TrainConfig, train

    train_cfg = train_cfg or TrainConfig(max_iter=500)
    X, y = data.train_val()
    rows = []
    for lam in lams:
        model = build(spec)
        report = train(model, X, y, train_cfg, lam=float(lam))
        rep = metrics.evaluate(predict_proba(model, data.x_test), data.y_test)
        rows.append({
            "lambda": float(lam),
            "accuracy": rep.accuracy,
            "auc": rep.auc,
            "energy": high_order_energy(model, lam).energy,
            "iterations": report.iterations,
        })
    return rows
