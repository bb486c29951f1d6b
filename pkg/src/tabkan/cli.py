"""Command-line entry point: ``tabkan <command> [options]``.

Every command writes into ``--out`` and records a ``manifest.json`` holding
the argument vector, a SHA-256 fingerprint of the preprocessed data, the
network spec, per-stage seeds, train and metric reports, and the version.

Exit codes: 0 success, 1 pipeline failure, 2 bad arguments or missing
input files, 3 output directory not empty without ``--force``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .datapipe import load_dataset, prepare, save_split_plan
from .interpret import (
    extract_edge_function,
    feature_importance,
    high_order_energy,
    lambda_sweep,
    top_k_retrain,
    write_curve_csv,
    write_curve_svg,
    write_importance_csv,
)
from .layers import LAYER_TYPES
from .nas import SearchConfig, fit_protocol, kfold_evaluate, run_search
from .network import NetworkSpec, load_checkpoint, predict_proba, save_checkpoint
from .optim import TrainConfig
from .seeds import derive_seed, stage_seeds
from .transfer import GrpoConfig, evaluate_bidirectional, make_overlap_split, pretrain_then_finetune

BUNDLED = {"cg": "credit_g", "credit_g": "credit_g", "sg": "segment", "segment": "segment"}
TRANSFER_DEFAULT = {"variant": "fourier", "hidden": [40, 40], "hyper": {"grid": 2}}


class UsageError(Exception):
    """Bad arguments or missing inputs (exit 2)."""


class OutputExists(Exception):
    """Output directory already holds files (exit 3)."""


# ---------------------------------------------------------------- helpers


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def resolve_dataset(name):
    """A CSV path, or a bundled dataset name (cg, credit_g, sg, segment)."""
    p = Path(name)
    if p.exists():
        return p
    key = name.lower().removesuffix(".csv")
    if key in BUNDLED:
        return Path(str(resources.files("tabkan") / "data" / f"{BUNDLED[key]}.csv"))
    raise UsageError(f"dataset file not found: {name}")


def _load(args):
    if not args.dataset:
        raise UsageError("--dataset is required")
    csv_path = resolve_dataset(args.dataset)
    schema = args.schema
    if schema is not None and not Path(schema).exists():
        raise UsageError(f"schema file not found: {schema}")
    if schema is None and not csv_path.with_name(csv_path.stem + ".schema.json").exists():
        raise UsageError(f"schema file not found: {csv_path.with_name(csv_path.stem + '.schema.json')}")
    return load_dataset(csv_path, schema)


def fingerprint(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype.str).encode() + str(a.shape).encode())
        h.update(a.astype(a.dtype.newbyteorder("<")).tobytes())
    return h.hexdigest()


def _prepared_fingerprint(P):
    return fingerprint(P.x_train, P.y_train, P.x_val, P.y_val, P.x_test, P.y_test)


def workers(args):
    if args.workers is not None:
        return max(int(args.workers), 1)
    env = os.environ.get("TABKAN_THREADS")
    return max(int(env), 1) if env else 1


def _hyper(args):
    v = args.variant
    h = {}
    if v in ("cheby", "fkan", "jacobi_r") and args.order is not None:
        h["order"] = args.order
    if v in ("fourier", "spline") and args.grid is not None:
        h["grid"] = args.grid
    if v == "pade" and args.degrees is not None:
        d = _ints(args.degrees)
        if len(d) != 2:
            raise UsageError("--degrees takes two integers, e.g. 3,3")
        h["degrees"] = d
    return h


def make_spec(args, n_features, n_classes, seed, default=None):
    """NetworkSpec from ``--widths`` or ``--hidden``; end widths must match the data."""
    if args.widths:
        widths = _ints(args.widths)
        if widths[0] != n_features or widths[-1] != n_classes:
            raise UsageError(
                f"--widths must start with {n_features} (encoded features) and end with "
                f"{n_classes} (classes), got {args.widths}"
            )
    elif args.hidden is not None:
        widths = [n_features] + _ints(args.hidden) + [n_classes]
    elif default is not None:
        widths = [n_features] + list(default) + [n_classes]
    else:
        widths = [n_features, n_classes]
    try:
        return NetworkSpec(args.variant, widths, _hyper(args), seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def train_config(args):
    return TrainConfig(max_iter=args.max_iter, seed=derive_seed(args.seed, "init"))


def prepare_out(args):
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise OutputExists(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_csv(path, rows, fields=None):
    fields = fields or list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(r[k], sort_keys=True) if isinstance(r[k], dict) else r[k] for k in fields})


def write_manifest(out, args, argv, data_fingerprint, spec=None, train_report=None, metric_report=None, **extra):
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "version": __version__,
        "dataset_fingerprint": data_fingerprint,
        "spec": spec.to_dict() if spec is not None else None,
        "seed": args.seed,
        "seeds": stage_seeds(args.seed),
        "train_report": train_report,
        "metrics": metric_report,
        **extra,
    }
    write_json(out / "manifest.json", manifest)


# ---------------------------------------------------------------- commands


def cmd_train(args, argv):
    ds = _load(args)
    if args.lam < 0:
        raise UsageError("--lambda must be nonnegative")
    out = prepare_out(args)
    P = prepare(ds, args.scale, derive_seed(args.seed, "split"))
    spec = make_spec(args, P.n_features, P.n_classes, derive_seed(args.seed, "init"))
    cfg = train_config(args)
    save_split_plan(P.plan, out / "split.json")
    if args.lambda_sweep:
        lams = _floats(args.lambda_sweep)
        if any(v < 0 for v in lams):
            raise UsageError("--lambda-sweep values must be nonnegative")
        rows = lambda_sweep(P, spec, lams, TrainConfig(max_iter=args.max_iter))
        write_csv(out / "sweep.csv", rows)
        write_json(out / "metrics.json", {"sweep": rows})
        write_manifest(out, args, argv, _prepared_fingerprint(P), spec, None, {"sweep": rows},
                       protocol="train+val to convergence per lambda")
        return 0
    model, info = fit_protocol(spec, P, cfg, lam=args.lam, patience=args.patience)
    rep = metrics.evaluate(predict_proba(model, P.x_test), P.y_test)
    save_checkpoint(model, out / "model")
    write_json(out / "metrics.json", rep.to_dict())
    write_manifest(
        out, args, argv, _prepared_fingerprint(P), spec, info["final_report"].to_dict(), rep.to_dict(),
        best_iter=info["best_iter"], early_stop_report=info["search_report"].to_dict(), lam=args.lam,
    )
    print(json.dumps(rep.to_dict(), default=_jsonable))
    return 0


def cmd_nas(args, argv):
    ds = _load(args)
    if args.trials < 1 or args.n_init < 1:
        raise UsageError("--trials and --n-init must be positive")
    out = prepare_out(args)
    P = prepare(ds, args.scale, derive_seed(args.seed, "split"))
    n_workers = workers(args)
    cfg = SearchConfig(
        n_trials=args.trials, n_init=min(args.n_init, args.trials), seed=args.seed, workers=n_workers,
        patience=args.patience, train=TrainConfig(max_iter=args.max_iter),
    )
    log = (lambda t: print(f"trial {t.index}: {t.config()} val_f1={t.objective:.4f}", file=sys.stderr)) \
        if args.verbose else None
    result = run_search(P, args.variant, cfg, log)
    write_csv(out / "trials.csv", [t.to_row() for t in result.trials])
    spec = result.best_spec
    write_json(out / "best_spec.json", spec.to_dict())
    model, info = fit_protocol(spec, P, cfg.train, patience=args.patience)
    rep = metrics.evaluate(predict_proba(model, P.x_test), P.y_test)
    save_checkpoint(model, out / "model")
    write_json(out / "metrics.json", rep.to_dict())
    write_manifest(
        out, args, argv, _prepared_fingerprint(P), spec, info["final_report"].to_dict(), rep.to_dict(),
        best_iter=info["best_iter"], best_trial=result.best.to_row(), parallel=result.parallel,
        deterministic=not result.parallel,
    )
    print(json.dumps({"best": result.best.to_row(), "test": rep.to_dict()}, default=_jsonable))
    return 0


def cmd_transfer(args, argv):
    ds = _load(args)
    if args.beta < 0:
        raise UsageError("--beta must be nonnegative")
    out = prepare_out(args)
    split = make_overlap_split(ds, derive_seed(args.seed, "transfer"))
    default = None
    if not args.widths and args.hidden is None and args.variant == TRANSFER_DEFAULT["variant"]:
        default = TRANSFER_DEFAULT["hidden"]
        if args.grid is None:
            args.grid = TRANSFER_DEFAULT["hyper"]["grid"]
    spec = make_spec(args, ds.x.shape[1], ds.n_classes, derive_seed(args.seed, "init"), default)
    grpo = GrpoConfig(group_size=args.group_size, beta=args.beta, lr=args.lr, steps=args.steps,
                      seed=derive_seed(args.seed, "grpo"))
    results = pretrain_then_finetune(
        spec, ds, split, args.mode, args.scale, derive_seed(args.seed, "split"),
        TrainConfig(max_iter=args.max_iter), grpo, args.patience, workers(args),
    )
    summary = evaluate_bidirectional(results)
    write_json(out / "transfer.json", {
        "mode": args.mode, "beta": args.beta, "summary": summary,
        "results": [r.to_dict() for r in results], "split": split.to_dict(),
    })
    write_json(out / "metrics.json", summary)
    write_manifest(out, args, argv, fingerprint(ds.x, ds.y), spec, None, summary,
                   mode=args.mode, grpo=vars(grpo) if args.mode == "grpo" else None)
    print(json.dumps(summary["macro"]))
    return 0


def _edge_list(text, n_in, n_out):
    if text == "all":
        return [(i, o) for i in range(n_in) for o in range(n_out)]
    edges = []
    for item in text.split(","):
        try:
            i, o = (int(v) for v in item.split(":"))
        except ValueError as exc:
            raise UsageError(f"edges are 'all' or i:o pairs, got {item!r}") from exc
        if not (0 <= i < n_in and 0 <= o < n_out):
            raise UsageError(f"edge {item} is outside the first layer ({n_in}x{n_out})")
        edges.append((i, o))
    return edges


def _checkpoint(path):
    p = Path(path)
    if not p.with_suffix(".json").exists() or not p.with_suffix(".bin").exists():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(p)


def cmd_interpret(args, argv):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    model = _checkpoint(args.checkpoint)
    first = model.layers[0]
    edges = _edge_list(args.edges, first.n_in, first.n_out)
    out = prepare_out(args)
    written = []
    for i, o in edges:
        edge = extract_edge_function(model, 0, i, o)
        stem = out / f"edge_l0_i{i}_o{o}"
        write_curve_csv(edge, stem.with_suffix(".csv"), args.points)
        write_curve_svg(edge, stem.with_suffix(".svg"), args.points, title=f"layer 0, input {i} -> output {o}")
        written.append(stem.name)
    try:
        energy = high_order_energy(model).to_dict()
    except ValueError:
        energy = None
    write_json(out / "energy.json", {"high_order_energy": energy, "edges": written})
    blob = Path(args.checkpoint).with_suffix(".bin").read_bytes()
    write_manifest(out, args, argv, None, model.spec, None, None,
                   checkpoint_sha256=hashlib.sha256(blob).hexdigest(), n_edges=len(written))
    print(f"wrote {len(written)} edge curves to {out}")
    return 0


def cmd_importance(args, argv):
    P = spec = None
    if args.checkpoint:
        model = _checkpoint(args.checkpoint)
        names = None
        if args.dataset:
            ds = _load(args)
            if ds.x.shape[1] == model.spec.widths[0]:
                names = ds.feature_names
        spec = model.spec
    else:
        ds = _load(args)
        P = prepare(ds, args.scale, derive_seed(args.seed, "split"))
        spec = make_spec(args, P.n_features, P.n_classes, derive_seed(args.seed, "init"))
        model, _ = fit_protocol(spec, P, train_config(args), patience=args.patience)
        names = P.feature_names
    if args.top_k and P is None:
        raise UsageError("--top-k needs --dataset and an architecture, not --checkpoint")
    out = prepare_out(args)
    try:
        imp = feature_importance(model, names)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_importance_csv(imp, out / "importance.csv")
    result = None
    if args.top_k:
        rows = top_k_retrain(P, spec, _floats(args.top_k), train_config(args), args.patience)
        write_csv(out / "topk.csv", rows)
        result = {"top_k": rows}
    write_manifest(out, args, argv, _prepared_fingerprint(P) if P is not None else None, spec, None, result)
    print(f"wrote importance for {imp.scores.size} features to {out}")
    return 0


def cmd_kfold(args, argv):
    ds = _load(args)
    ks = _ints(args.k)
    out = prepare_out(args)
    spec = make_spec(args, ds.x.shape[1], ds.n_classes, derive_seed(args.seed, "init"))
    rows, summaries = [], []
    for K in ks:
        fold_rows, summary = kfold_evaluate(
            ds, spec, K, args.seed, args.scale, TrainConfig(max_iter=args.max_iter), args.patience
        )
        rows += [{"K": K, **r} for r in fold_rows]
        summaries.append(summary)
        print(f"K={K}: accuracy {summary['accuracy_mean']:.4f} +/- {summary['accuracy_std']:.4f}")
    write_csv(out / "kfold.csv", rows, ["K", "fold", "accuracy", "auc", "macro_f1", "best_iter"])
    write_csv(out / "kfold_summary.csv", summaries)
    write_json(out / "metrics.json", {"folds": rows, "summary": summaries})
    write_manifest(out, args, argv, fingerprint(ds.x, ds.y), spec, None, {"summary": summaries},
                   protocol="scaler fit per fold; no oversampling; inner holdout for early stopping")
    return 0


COMMANDS = {
    "train": cmd_train,
    "nas": cmd_nas,
    "transfer": cmd_transfer,
    "interpret": cmd_interpret,
    "importance": cmd_importance,
    "kfold": cmd_kfold,
}


# ---------------------------------------------------------------- parser


def _common(p, data=True, arch=True):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None, help="parallel workers (default: TABKAN_THREADS or 1)")
    if data:
        p.add_argument("--dataset", help="CSV path or bundled name: cg, sg")
        p.add_argument("--schema", help="schema JSON (default: <csv stem>.schema.json)")
        p.add_argument("--scale", choices=("raw", "standard", "quantile"), default="standard")
        p.add_argument("--max-iter", type=int, default=300)
        p.add_argument("--patience", type=int, default=20)
    if arch:
        p.add_argument("--variant", choices=sorted(LAYER_TYPES), default="cheby")
        p.add_argument("--widths", help="all layer widths, e.g. 59,40,2")
        p.add_argument("--hidden", help="hidden widths only, e.g. 40,40")
        p.add_argument("--order", type=int)
        p.add_argument("--grid", type=int)
        p.add_argument("--degrees", help="pade numerator,denominator degrees, e.g. 3,3")


def build_parser():
    parser = argparse.ArgumentParser(prog="tabkan", description="KAN classifiers for tabular data")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one architecture and score the test split")
    _common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="smoothness penalty weight")
    p.add_argument("--lambda-sweep", help="comma-separated lambdas; writes sweep.csv instead of a checkpoint")

    p = sub.add_parser("nas", help="Bayesian-optimization architecture search")
    _common(p, arch=False)
    p.add_argument("--variant", choices=sorted(LAYER_TYPES), required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("transfer", help="feature-overlap transfer in both directions")
    _common(p)
    p.set_defaults(variant="fourier")
    p.add_argument("--mode", choices=("standard", "grpo"), default="standard")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=200, help="GRPO steps")
    p.add_argument("--lr", type=float, default=1e-2, help="GRPO learning rate")
    p.add_argument("--group-size", type=int, default=8)

    p = sub.add_parser("interpret", help="export first-layer edge curves from a checkpoint")
    _common(p, data=False, arch=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--edges", default="all", help="'all' or i:o pairs, e.g. 0:1,3:0")
    p.add_argument("--points", type=int, default=200)

    p = sub.add_parser("importance", help="first-layer feature importance")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--top-k", help="feature fractions to retrain on, e.g. 0.2,0.4,0.6,0.8,1.0")

    p = sub.add_parser("kfold", help="stratified K-fold evaluation of one architecture")
    _common(p)
    p.add_argument("--k", default="3,5,7", help="fold counts, e.g. 3,5,7")
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"tabkan {args.command}: {exc}", file=sys.stderr)
        return 2
    except OutputExists as exc:
        print(f"tabkan {args.command}: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"tabkan {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"tabkan {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
