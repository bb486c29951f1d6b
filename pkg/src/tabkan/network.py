"""Layer stacks as classifiers with a flat-parameter objective.

Parameters are flattened layer-major, then tensor-major in each layer's
``param_names`` order, then row-major within a tensor.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from .layers import LAYER_TYPES, make_layer

__all__ = [
    "NetworkSpec",
    "Model",
    "NonFiniteLossError",
    "build",
    "predict_logits",
    "predict_proba",
    "loss_and_grad",
    "backprop",
    "cross_entropy",
    "flatten",
    "unflatten",
    "set_freeze",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "tabkan-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    """Raised when the forward pass produces non-finite values."""

    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


@dataclass
class NetworkSpec:
    """Architecture description.

    ``hyper`` holds the variant keyword arguments, e.g. ``{"order": 4}`` for
    cheby, ``{"grid": 3}`` for fourier, ``{"degrees": [3, 3]}`` for pade.
    """

    variant: str
    widths: list
    hyper: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.variant not in LAYER_TYPES:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2 or min(self.widths) < 1:
            raise ValueError("widths must list at least an input and an output size, all positive")
        self.hyper = dict(self.hyper)
        self.seed = int(self.seed)

    @property
    def depth(self):
        return len(self.widths) - 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["variant"], d["widths"], d.get("hyper", {}), d.get("seed", 0))


class Model:
    def __init__(self, spec: NetworkSpec, layers):
        self.spec = spec
        self.layers = list(layers)
        self.freeze_mask = np.zeros(self.param_count(), dtype=bool)

    def param_count(self):
        return sum(layer.param_count() for layer in self.layers)

    def layer_slices(self):
        """Flat-vector slice of each layer."""
        out, start = [], 0
        for layer in self.layers:
            n = layer.param_count()
            out.append(slice(start, start + n))
            start += n
        return out

    def __repr__(self):
        return f"Model({self.spec.variant}, widths={self.spec.widths}, params={self.param_count()})"


def build(spec: NetworkSpec, n_features=None, n_classes=None) -> Model:
    """Initialize a model deterministically from ``spec.seed``.

    ``n_features`` and ``n_classes``, when given, are checked against the
    first and last widths.
    """
    if n_features is not None and spec.widths[0] != n_features:
        raise ValueError(f"input width {spec.widths[0]} does not match {n_features} features")
    if n_classes is not None and spec.widths[-1] != n_classes:
        raise ValueError(f"output width {spec.widths[-1]} does not match {n_classes} classes")
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.depth)
    layers = [
        make_layer(spec.variant, a, b, rng=np.random.default_rng(s), **spec.hyper)
        for a, b, s in zip(spec.widths[:-1], spec.widths[1:], seeds)
    ]
    return Model(spec, layers)


def _forward(model, X, keep_cache):
    caches = []
    h = np.asarray(X, dtype=float)
    if h.ndim != 2 or h.shape[1] != model.spec.widths[0]:
        raise ValueError(f"expected X with {model.spec.widths[0]} columns, got shape {h.shape}")
    for idx, layer in enumerate(model.layers):
        h, cache = layer.forward(h)
        if not np.all(np.isfinite(h)):
            raise NonFiniteLossError(f"non-finite output from layer {idx}", layer_index=idx)
        if keep_cache:
            caches.append(cache)
    return h, caches


def predict_logits(model, X):
    return _forward(model, X, keep_cache=False)[0]


def predict_proba(model, X):
    return softmax(predict_logits(model, X), axis=1)


def backprop(model, X, logit_loss):
    """Objective and flat gradient for any loss defined on the logits.

    ``logit_loss(logits) -> (loss, dloss/dlogits)``. Frozen positions get 0.
    """
    logits, caches = _forward(model, X, keep_cache=True)
    loss, d = logit_loss(logits)
    grads = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        g, d = layer.backward(cache, d)
        grads.append(np.concatenate([g[name].ravel() for name in layer.param_names]))
    flat = np.concatenate(grads[::-1])
    flat[model.freeze_mask] = 0.0
    return float(loss), flat


def cross_entropy(logits, y):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    B, M = logits.shape
    if y.shape != (B,) or y.min(initial=0) < 0 or y.max(initial=0) >= M:
        raise ValueError("labels must be a length-B vector with values in [0, M)")
    logp = log_softmax(logits, axis=1)
    loss = -float(np.mean(logp[np.arange(B), y]))
    dZ = np.exp(logp)
    dZ[np.arange(B), y] -= 1.0
    return loss, dZ / B


def loss_and_grad(model, X, y, lam=0.0):
    """Mean softmax cross-entropy plus the optional smoothness penalty.

    Returns ``(loss, flat_grad)`` with zeros at frozen positions.
    """
    y = np.asarray(y, dtype=int)
    loss, flat = backprop(model, X, lambda z: cross_entropy(z, y))
    if lam:
        from .interpret import smoothness_penalty

        pen, pen_grad = smoothness_penalty(model, lam)
        loss += pen
        flat += np.where(model.freeze_mask, 0.0, pen_grad)
    if not np.isfinite(loss):
        raise NonFiniteLossError("non-finite loss", layer_index=len(model.layers) - 1)
    return loss, flat


def flatten(model):
    return np.concatenate(
        [layer.params[name].ravel() for layer in model.layers for name in layer.param_names]
    )


def unflatten(model, vector):
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (model.param_count(),):
        raise ValueError(f"expected a vector of length {model.param_count()}, got {vector.shape}")
    pos = 0
    for layer in model.layers:
        for name in layer.param_names:
            p = layer.params[name]
            p[...] = vector[pos : pos + p.size].reshape(p.shape)
            pos += p.size


def set_freeze(model, policy):
    """``none`` unfreezes everything.

    ``all_but_head`` freezes every layer except the last; tensors named
    ``bias`` stay trainable wherever a variant has them.
    """
    mask = np.zeros(model.param_count(), dtype=bool)
    if policy == "all_but_head":
        pos = 0
        for layer in model.layers[:-1]:
            for name in layer.param_names:
                n = layer.params[name].size
                mask[pos : pos + n] = name != "bias"
                pos += n
    elif policy != "none":
        raise ValueError(f"unknown freeze policy {policy!r}")
    model.freeze_mask = mask


def _mask_runs(mask):
    edges = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(np.int8), [0]])))
    return edges.reshape(-1, 2).tolist()


def save_checkpoint(model, path):
    """Write ``<path>.json`` (header) and ``<path>.bin`` (little-endian float64)."""
    path = Path(path)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "layers": [],
        "frozen_runs": _mask_runs(model.freeze_mask),
    }
    offset = 0
    for layer in model.layers:
        tensors = []
        for name in layer.param_names:
            p = layer.params[name]
            tensors.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": p.size * 8})
            offset += p.size * 8
        header["layers"].append(
            {
                "variant": layer.variant,
                "n_in": layer.n_in,
                "n_out": layer.n_out,
                "hyperparams": layer.hyperparams(),
                "tensors": tensors,
            }
        )
    header["total_bytes"] = offset
    flatten(model).astype("<f8").tofile(path.with_suffix(".bin"))
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")
    return path.with_suffix(".json"), path.with_suffix(".bin")


def load_checkpoint(path) -> Model:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path.with_suffix('.json')} is not a model checkpoint")
    blob = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    if blob.size * 8 != header["total_bytes"]:
        raise ValueError("checkpoint payload size does not match header")
    model = build(NetworkSpec.from_dict(header["spec"]))
    for layer, entry in zip(model.layers, header["layers"]):
        if entry["variant"] != layer.variant or entry["n_in"] != layer.n_in or entry["n_out"] != layer.n_out:
            raise ValueError("checkpoint layer layout does not match its spec")
        for t in entry["tensors"]:
            start = t["offset"] // 8
            n = t["nbytes"] // 8
            layer.params[t["name"]][...] = blob[start : start + n].reshape(t["shape"])
    mask = np.zeros(model.param_count(), dtype=bool)
    for a, b in header.get("frozen_runs", []):
        mask[a:b] = True
    model.freeze_mask = mask
    return model
