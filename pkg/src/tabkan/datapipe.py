"""Tabular preprocessing: load, impute, one-hot encode, balance, scale, split."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtri

__all__ = [
    "ColumnSchema",
    "RawTable",
    "Dataset",
    "ScalerState",
    "SplitPlan",
    "Prepared",
    "load_schema",
    "load_csv",
    "load_dataset",
    "impute",
    "one_hot_encode",
    "smote_samples",
    "balance_smote",
    "fit_scaler",
    "apply_scaler",
    "split_70_10_20",
    "stratified_kfold",
    "prepare",
    "save_dataset_csv",
    "save_split_plan",
]

KINDS = ("numerical", "categorical", "binary", "label")


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    categories: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"column {self.name!r}: unknown kind {self.kind!r}")
        cats = tuple(str(c) for c in self.categories)
        if len(set(cats)) != len(cats):
            raise ValueError(f"column {self.name!r}: duplicate categories")
        if self.kind in ("categorical", "binary") and not cats:
            raise ValueError(f"column {self.name!r}: categories required")
        if self.kind == "binary" and len(cats) != 2:
            raise ValueError(f"column {self.name!r}: binary columns need exactly 2 categories")
        object.__setattr__(self, "categories", cats)


def _check_schema(schema):
    schema = list(schema)
    if sum(c.kind == "label" for c in schema) != 1:
        raise ValueError("schema must contain exactly one label column")
    return schema


def load_schema(path):
    """Read a JSON schema sidecar; returns (columns, missing_sentinel)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"schema file not found: {path}")
    doc = json.loads(path.read_text())
    cols = [ColumnSchema(c["name"], c["kind"], tuple(c.get("categories", ()))) for c in doc["columns"]]
    return _check_schema(cols), doc.get("missing", "?")


@dataclass
class RawTable:
    """Parsed columns: float arrays with nan for numerical, object arrays with None otherwise."""

    schema: list
    columns: dict

    @property
    def n_rows(self):
        return len(next(iter(self.columns.values())))

    def n_missing(self):
        total = 0
        for col in self.schema:
            v = self.columns[col.name]
            total += int(np.isnan(v).sum()) if col.kind == "numerical" else sum(x is None for x in v)
        return total

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return RawTable(self.schema, {k: v[rows] for k, v in self.columns.items()})

    def select(self, names):
        names = set(names)
        keep = [c for c in self.schema if c.name in names or c.kind == "label"]
        return RawTable(keep, {c.name: self.columns[c.name] for c in keep})


def load_csv(path, schema, missing="?"):
    schema = _check_schema(schema)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = [c.name for c in schema]
        if header != names:
            raise ValueError(f"header {header} does not match schema {names}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(schema):
                raise ValueError(f"malformed row at line {lineno}: expected {len(schema)} cells, got {len(row)}")
            rows.append(row)
    columns = {}
    for j, col in enumerate(schema):
        cells = [r[j].strip() for r in rows]
        is_missing = [c == "" or c == missing for c in cells]
        if col.kind == "numerical":
            vals = np.empty(len(cells))
            for i, (c, m) in enumerate(zip(cells, is_missing)):
                if m:
                    vals[i] = np.nan
                    continue
                try:
                    vals[i] = float(c)
                except ValueError:
                    raise ValueError(f"unparseable numeric cell {c!r} in column {col.name!r}") from None
            columns[col.name] = vals
        else:
            vals = np.empty(len(cells), dtype=object)
            allowed = set(col.categories)
            for i, (c, m) in enumerate(zip(cells, is_missing)):
                if m:
                    vals[i] = None
                elif allowed and c not in allowed:
                    raise ValueError(f"unknown category {c!r} in column {col.name!r}")
                else:
                    vals[i] = c
            columns[col.name] = vals
    return RawTable(schema, columns)


def _label_column(table):
    return next(c for c in table.schema if c.kind == "label")


def label_codes(table):
    """Integer labels by sorted class name, plus the class names."""
    col = _label_column(table)
    raw = table.columns[col.name]
    if any(v is None for v in raw):
        raise ValueError("labels must not be missing")
    names = sorted(set(col.categories) | set(raw))
    index = {n: i for i, n in enumerate(names)}
    return np.array([index[v] for v in raw], dtype=int), names


def impute(table, labels, k=5, tol=1e-8, max_iter=100):
    """Class-conditional mean fill for numerical columns, KNN mode for the rest."""
    labels = np.asarray(labels)
    num_cols = [c.name for c in table.schema if c.kind == "numerical"]
    cat_cols = [c for c in table.schema if c.kind in ("categorical", "binary")]
    out = {k_: v.copy() for k_, v in table.columns.items()}
    if table.n_missing() == 0:
        return RawTable(table.schema, out)

    observed = {}
    for name in num_cols:
        v = table.columns[name]
        obs = ~np.isnan(v)
        if not obs.any():
            raise ValueError(f"column {name!r} has no observed values")
        observed[name] = obs
        filled = np.where(obs, v, np.nanmean(v))
        for _ in range(max_iter):
            prev = filled.copy()
            for c in np.unique(labels):
                rows = labels == c
                src = filled[rows & obs] if (rows & obs).any() else filled[obs]
                filled[rows & ~obs] = src.mean()
            if np.max(np.abs(filled - prev)) <= tol:
                break
        out[name] = filled

    if cat_cols:
        if num_cols:
            raw = np.column_stack([table.columns[n] for n in num_cols])
            mu = np.nanmean(raw, axis=0)
            sd = np.nanstd(raw, axis=0)
            Z = (raw - mu) / np.where(sd > 0, sd, 1.0)
        else:
            Z = np.zeros((table.n_rows, 0))
        for col in cat_cols:
            v = table.columns[col.name]
            miss = np.array([x is None for x in v])
            if not miss.any():
                continue
            if miss.all():
                raise ValueError(f"column {col.name!r} has no observed values")
            order = {c: i for i, c in enumerate(col.categories)}
            for r in np.flatnonzero(miss):
                pool = np.flatnonzero(~miss & (labels == labels[r]))
                if pool.size == 0:
                    pool = np.flatnonzero(~miss)
                diff = Z[pool] - Z[r]
                diff = np.where(np.isnan(diff), 0.0, diff)
                dist = np.sqrt(np.sum(diff * diff, axis=1))
                nearest = pool[np.argsort(dist, kind="stable")[:k]]
                vals, counts = np.unique(v[nearest].astype(str), return_counts=True)
                top = vals[counts == counts.max()]
                out[col.name][r] = min(top, key=lambda c: order.get(c, len(order)))
    return RawTable(table.schema, out)


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    feature_names: list
    n_classes: int
    class_names: list = field(default_factory=list)
    source_columns: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x must be 2-D with one row per label")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels out of range")

    @property
    def n_features(self):
        return self.x.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows, dtype=int)
        return replace(self, x=self.x[rows], y=self.y[rows])

    def select_features(self, cols):
        cols = list(cols)
        return replace(
            self,
            x=self.x[:, cols],
            feature_names=[self.feature_names[c] for c in cols],
            source_columns=[self.source_columns[c] for c in cols] if self.source_columns else [],
        )


def one_hot_encode(table, schema=None):
    schema = _check_schema(schema or table.schema)
    if table.n_missing():
        raise ValueError("table must be fully imputed before encoding")
    y, class_names = label_codes(table)
    blocks, names, sources = [], [], []
    for col in schema:
        if col.kind == "label":
            continue
        v = table.columns[col.name]
        if col.kind == "numerical":
            blocks.append(v[:, None].astype(float))
            names.append(col.name)
            sources.append(col.name)
        elif col.kind == "binary":
            blocks.append((v == col.categories[1]).astype(float)[:, None])
            names.append(col.name)
            sources.append(col.name)
        else:
            blocks.append(np.column_stack([(v == c).astype(float) for c in col.categories]))
            names.extend(f"{col.name}={c}" for c in col.categories)
            sources.extend([col.name] * len(col.categories))
    x = np.hstack(blocks) if blocks else np.zeros((len(y), 0))
    return Dataset(x, y, names, len(class_names), class_names, sources)


def load_dataset(csv_path, schema_path=None, k=5):
    """load_csv -> impute -> one_hot_encode; the schema defaults to ``<stem>.schema.json``."""
    csv_path = Path(csv_path)
    if schema_path is None:
        schema_path = csv_path.with_name(csv_path.stem + ".schema.json")
    schema, missing = load_schema(schema_path)
    table = load_csv(csv_path, schema, missing)
    y, _ = label_codes(table)
    return one_hot_encode(impute(table, y, k=k))


def smote_samples(X_min, n_new, rng, k=5):
    """Synthetic rows x_i + u (x_j - x_i) with x_j among the k nearest minority rows.

    Returns ``(rows, i, j, u)`` so callers can verify each row's parents.
    """
    X_min = np.asarray(X_min, dtype=float)
    n = X_min.shape[0]
    if n < 2:
        raise ValueError("SMOTE needs at least two minority rows")
    kk = min(k, n - 1)
    d2 = np.sum((X_min[:, None, :] - X_min[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    i = rng.integers(0, n, size=n_new)
    j = neighbors[i, rng.integers(0, kk, size=n_new)]
    u = rng.random(n_new)
    rows = X_min[i] + u[:, None] * (X_min[j] - X_min[i])
    return rows, i, j, u


def balance_smote(ds, seed, k=5):
    """Oversample every class to the majority count."""
    rng = np.random.default_rng(seed)
    counts = np.bincount(ds.y, minlength=ds.n_classes)
    target = counts.max()
    xs, ys = [ds.x], [ds.y]
    col_sd = ds.x.std(axis=0)
    for c in range(ds.n_classes):
        need = target - counts[c]
        if need <= 0 or counts[c] == 0:
            continue
        X_c = ds.x[ds.y == c]
        if counts[c] == 1:
            sigma = 1e-3 * np.where(col_sd > 0, col_sd, 1.0)
            new = X_c + rng.normal(size=(need, ds.n_features)) * sigma
        else:
            new = smote_samples(X_c, need, rng, k)[0]
        xs.append(new)
        ys.append(np.full(need, c))
    return replace(ds, x=np.vstack(xs), y=np.concatenate(ys))


@dataclass
class ScalerState:
    mode: str
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    ref_values: list | None = None
    ref_scores: list | None = None

    def inverse(self, Z):
        """Map scaled values back to original units (standard/raw exact, quantile by interpolation)."""
        Z = np.asarray(Z, dtype=float)
        if self.mode == "raw":
            return Z.copy()
        if self.mode == "standard":
            return Z * self.std + self.mean
        out = np.empty_like(Z)
        for j, (v, s) in enumerate(zip(self.ref_values, self.ref_scores)):
            out[..., j] = np.interp(Z[..., j], s, v) if len(v) > 1 else v[0]
        return out


def fit_scaler(x, mode="standard"):
    x = np.asarray(x, dtype=float)
    if mode == "raw":
        return ScalerState("raw")
    if mode == "standard":
        return ScalerState("standard", mean=x.mean(axis=0), std=np.maximum(x.std(axis=0), 1e-8))
    if mode == "quantile":
        n = x.shape[0]
        values, scores = [], []
        for col in x.T:
            srt = np.sort(col)
            uniq, first = np.unique(srt, return_index=True)
            last = np.append(first[1:], n) - 1
            midrank = (first + last) / 2.0 + 1.0
            values.append(uniq)
            scores.append(ndtri((midrank - 0.5) / n))
        return ScalerState("quantile", ref_values=values, ref_scores=scores)
    raise ValueError(f"unknown scaling mode {mode!r}")


def apply_scaler(state, x):
    x = np.asarray(x, dtype=float)
    if state.mode == "raw":
        return x.copy()
    if state.mode == "standard":
        return (x - state.mean) / state.std
    out = np.empty_like(x)
    for j, (v, s) in enumerate(zip(state.ref_values, state.ref_scores)):
        out[:, j] = np.interp(x[:, j], v, s)
    return out


@dataclass
class SplitPlan:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "seed": self.seed,
            "train": self.train.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
            "warnings": list(self.warnings),
        }


def _round_half_up(v):
    return int(np.floor(v + 0.5))


def split_70_10_20(ds, seed):
    y = ds.y if isinstance(ds, Dataset) else np.asarray(ds)
    if y.size < 10:
        raise ValueError("need at least 10 rows to split")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    notes = []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        n = idx.size
        if n < 3:
            msg = f"class {int(c)} has {n} samples; placed entirely in train"
            warnings.warn(msg)
            notes.append(msg)
            parts[0].append(idx)
            continue
        n_tr = _round_half_up(0.7 * n)
        n_va = _round_half_up(0.1 * n)
        parts[0].append(idx[:n_tr])
        parts[1].append(idx[n_tr : n_tr + n_va])
        parts[2].append(idx[n_tr + n_va :])
    tr, va, te = (np.sort(np.concatenate(p)) if p else np.array([], dtype=int) for p in parts)
    return SplitPlan(tr, va, te, int(seed), notes)


def stratified_kfold(ds, K, seed):
    """Round-robin fold assignment per class with a rotating start offset."""
    y = ds.y if isinstance(ds, Dataset) else np.asarray(ds)
    n = y.size
    if not 2 <= K <= n:
        raise ValueError("K must lie in [2, n]")
    counts = np.bincount(y)
    if K > counts[counts > 0].min():
        raise ValueError(f"K={K} exceeds the smallest class count {counts[counts > 0].min()}")
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=int)
    offset = 0
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        fold[idx] = (offset + np.arange(idx.size)) % K
        offset = (offset + idx.size) % K
    all_idx = np.arange(n)
    return [(all_idx[fold != f], all_idx[fold == f]) for f in range(K)]


@dataclass
class Prepared:
    """Scaled train/val/test matrices ready for training."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    scaler: ScalerState
    plan: SplitPlan
    feature_names: list
    n_classes: int

    @property
    def n_features(self):
        return self.x_train.shape[1]

    def select_features(self, cols):
        cols = np.asarray(cols, dtype=int)
        return replace(
            self,
            x_train=self.x_train[:, cols],
            x_val=self.x_val[:, cols],
            x_test=self.x_test[:, cols],
            feature_names=[self.feature_names[c] for c in cols],
        )

    def train_val(self):
        return np.vstack([self.x_train, self.x_val]), np.concatenate([self.y_train, self.y_val])


def prepare(ds, scale="standard", seed=0, smote=True, plan=None, k=5):
    """Split, oversample train rows, fit the scaler on original train rows, scale all parts."""
    plan = plan or split_70_10_20(ds, seed)
    train = ds.subset(plan.train)
    scaler = fit_scaler(train.x, scale)
    if smote:
        train = balance_smote(train, seed, k)
    val, test = ds.subset(plan.val), ds.subset(plan.test)
    return Prepared(
        apply_scaler(scaler, train.x), train.y,
        apply_scaler(scaler, val.x), val.y,
        apply_scaler(scaler, test.x), test.y,
        scaler, plan, list(ds.feature_names), ds.n_classes,
    )


def save_dataset_csv(ds, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + ["label"])
        for row, label in zip(ds.x, ds.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])


def save_split_plan(plan, path):
    Path(path).write_text(json.dumps(plan.to_dict()) + "\n")
