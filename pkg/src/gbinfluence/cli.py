"""Command-line interface: train, influence, oracle, experiment.

Every output file is written to a temporary sibling and renamed into place,
so a failed command leaves nothing half-written. Errors print one line to
stderr and exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import inspect
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import influence as inf
from . import modelio, oracle
from .dataio import BiasSpec, DataError, Dataset, load_csv
from .dataio import make_classification, make_hospital_like, make_regression
from .eval import experiments, reports
from .gbdt import FORMULAS, Params, fit
from .loss import get_loss

SEED_ENV = "GBINFLUENCE_SEED"
log = logging.getLogger("gbinfluence")


class CliError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# --- helpers --------------------------------------------------------------

def _load_model(path):
    try:
        return modelio.load(path)
    except FileNotFoundError:
        raise CliError(f"model file not found: {path}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot read model {path}: {exc}") from None


def _load_data(path, label_col, weight_col=None) -> Dataset:
    try:
        return load_csv(path, label_col, weight_col)
    except FileNotFoundError:
        raise CliError(f"data file not found: {path}") from None


def _require_trace(trace, path):
    if trace is None:
        raise CliError(f"model {path} was saved without a training trace; retrain without --no-trace")
    return trace


def _check_features(ens, ds: Dataset, what: str):
    if ds.d != ens.n_features:
        raise CliError(f"{what} has {ds.d} feature columns but the model expects {ens.n_features}")


def _check_training_data(trace, ds: Dataset):
    if ds.n != trace.n or not np.array_equal(ds.labels, trace.labels) or not np.array_equal(ds.weights, trace.weights):
        raise CliError("data does not match the model's training set (row count, labels or weights differ)")


def _row_of(ids, train_id):
    ids = np.asarray(ids)
    match = np.flatnonzero(ids.astype(str) == str(train_id))
    if len(match) != 1:
        raise CliError(f"unknown train id {train_id!r}")
    return int(match[0])


def _parse_ids(text, trace):
    if text is None or text.strip().lower() == "all":
        return list(range(trace.n))
    rows = [_row_of(trace.ids, tok.strip()) for tok in text.split(",") if tok.strip()]
    if not rows:
        raise CliError("--train-ids is empty")
    return sorted(set(rows))


def _write_csv(path, rows):
    modelio.atomic_write_text(path, reports.rows_to_csv(rows))


# --- train ----------------------------------------------------------------

def cmd_train(args):
    ds = _load_data(args.data, args.label_col, args.weight_col)
    params = Params(n_trees=args.trees, depth=args.depth, learning_rate=args.lr, l2=args.l2,
                    loss=args.loss, formula=args.formula, seed=args.seed, bias=args.bias)
    ens, trace = fit(ds, params)
    modelio.save(args.out, ens, None if args.no_trace else trace, params)
    log.info("wrote %s (%d trees, depth %d, n=%d)", args.out, ens.n_trees, ens.depth, ds.n)


# --- influence ------------------------------------------------------------

def _influence_row(trace, ens, method, strategy, i0, leaves, y):
    t0 = time.perf_counter()
    res = inf.compute(trace, i0, method, strategy)
    kind = inf._kind(method)
    table = (res.leaf_values if kind == "refit" else res.leaf_derivatives)[None]
    value = float(inf.mean_influence(ens, kind, table, y=y, leaves=leaves)[0])
    return value, time.perf_counter() - t0


def cmd_influence(args):
    ens, trace, _ = _load_model(args.model)
    trace = _require_trace(trace, args.model)
    method = args.method.lower()
    strategy = None
    if method.startswith("fast"):
        try:
            strategy = inf.UpdateSetStrategy.parse(args.strategy or "all")
        except ValueError as exc:
            raise CliError(str(exc)) from None
    elif args.strategy is not None:
        raise CliError(f"--strategy applies only to fast methods, not {method}")
    test = _load_data(args.test_data, args.label_col)
    _check_features(ens, test, "test data")
    leaves = ens.leaf_indices(test.features)
    rows_idx = _parse_ids(args.train_ids, trace)
    trace.leaf_order  # build once before fanning out

    def job(i0):
        return _influence_row(trace, ens, method, strategy, i0, leaves, test.labels)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(job, rows_idx))
    else:
        results = [job(i0) for i0 in rows_idx]
    label = "exact" if strategy is None else strategy.label
    rows = [dict(train_id=trace.ids[i0].item(), method=method, strategy=label, influence_value=repr(v),
                 seconds=f"{s:.6g}") for i0, (v, s) in zip(rows_idx, results)]
    _write_csv(args.out, rows)
    log.info("wrote %d rows to %s", len(rows), args.out)


# --- oracle ---------------------------------------------------------------

def cmd_oracle(args):
    mode = "fd" if args.kind == "fd" else args.mode
    ens, trace, params = _load_model(args.model)
    ds = _load_data(args.data, args.label_col, args.weight_col)
    _check_features(ens, ds, "training data")
    if trace is not None:
        _check_training_data(trace, ds)
    if params is None:
        raise CliError("model file carries no training parameters")
    ids = ds.ids if trace is None else trace.ids
    i0 = _row_of(ids, args.train_id)
    test = _load_data(args.test_data, args.label_col) if args.test_data else ds
    _check_features(ens, test, "test data")
    loss = get_loss(ens.loss)
    t0 = time.perf_counter()
    if mode == "fd":
        value = float(np.mean(oracle.fd_loss_derivative(ds, params, i0, ens, test.features, test.labels, args.eps)))
        label = f"fd:{args.eps:g}"
    else:
        other = oracle.retrain_without(ds, params, i0, mode="full" if mode == "full" else "fixed_structure",
                                       reference=ens)
        before = loss.value(test.labels, ens.predict(test.features))
        after = loss.value(test.labels, other.predict(test.features))
        value = float(np.mean(before - after))
        label = mode
    row = dict(train_id=ids[i0].item(), mode=label, influence_value=repr(value),
               seconds=f"{time.perf_counter() - t0:.6g}")
    if args.out:
        _write_csv(args.out, [row])
    else:
        sys.stdout.write(reports.rows_to_csv([row]))


# --- experiment -----------------------------------------------------------

_GENERATORS = {
    "classification": make_classification,
    "regression": make_regression,
    "hospital": make_hospital_like,
}
_DRIVERS = {
    "proxy": experiments.proxy_approx_experiment,
    "noise": experiments.noise_experiment,
    "mismatch": experiments.mismatch_experiment,
    "bench": experiments.runtime_bench,
}


def load_experiment_data(spec: dict, seed: int, base: Path):
    """``(train, test)`` from a config ``data`` block (CSV paths or a generator)."""
    spec = dict(spec)
    if "generator" in spec:
        name = spec.pop("generator")
        if name not in _GENERATORS:
            raise CliError(f"unknown generator {name!r}; expected one of {sorted(_GENERATORS)}")
        n_test = int(spec.pop("n_test", 0))
        n = int(spec.pop("n"))
        spec.setdefault("seed", seed)
        full = _GENERATORS[name](n + n_test, **spec)
        return full.take(np.arange(n)), full.take(np.arange(n, n + n_test)) if n_test else None
    label = spec.get("label_col", "label")
    train = _load_data(base / spec["train"], label, spec.get("weight_col"))
    test = _load_data(base / spec["test"], label) if spec.get("test") else None
    return train, test


def run_experiment(kind: str, config: dict, base: Path = Path(".")) -> dict:
    if kind not in _DRIVERS:
        raise CliError(f"unknown experiment {kind!r}")
    config = dict(config)
    seed = int(config.pop("seed", default_seed()))
    if "data" not in config:
        raise CliError("experiment config needs a 'data' block")
    train, test = load_experiment_data(config.pop("data"), seed, base)
    params = Params(**{"seed": seed, **config.pop("params", {})})
    methods = config.pop("methods", None)
    if not methods:
        raise CliError("experiment config needs a non-empty 'methods' list")
    if "bias" in config:
        b = config.pop("bias")
        config["bias_spec"] = BiasSpec(b["column"], float(b["low"]), float(b["high"]), float(b["label"]))
    config.pop("out_dir", None)
    driver = _DRIVERS[kind]
    accepted = set(inspect.signature(driver).parameters)
    unknown = sorted(set(config) - accepted)
    if unknown:
        raise CliError(f"unknown config keys for {kind}: {', '.join(unknown)}")
    if kind == "bench":
        return driver(train, params, methods, seed=seed, **config)
    if test is None:
        raise CliError(f"{kind} needs test data (data.test or data.n_test)")
    return driver(train, test, params, methods=methods, seed=seed, **config)


def cmd_experiment(args):
    path = Path(args.config)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from None
    out_dir = Path(args.out_dir or config.get("out_dir") or ".")
    report = run_experiment(args.kind, config, base=path.parent)
    paths = reports.write_report(report, out_dir, stem=args.kind, figures=not args.no_figures)
    for p in paths.values():
        log.info("wrote %s", p)


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gbinfluence", description="Training-sample influence for boosted trees.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit an ensemble and save it with its training trace")
    t.add_argument("--data", required=True)
    t.add_argument("--label-col", default="label")
    t.add_argument("--weight-col")
    t.add_argument("--loss", choices=("logloss", "squared"), default="logloss")
    t.add_argument("--formula", choices=FORMULAS, default="newton")
    t.add_argument("--trees", type=int, default=100)
    t.add_argument("--depth", type=int, default=6)
    t.add_argument("--lr", type=float, default=0.2)
    t.add_argument("--l2", type=float, default=0.0)
    t.add_argument("--bias", type=float, help="fixed initial prediction (default: best constant)")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--no-trace", action="store_true", help="omit the training trace (prediction only)")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("influence", help="mean test-loss influence of training rows")
    i.add_argument("--model", required=True)
    i.add_argument("--method", required=True, choices=inf.METHODS)
    i.add_argument("--strategy", help="single | all | topk:K | sampledtopk:K:M[:SEED]")
    i.add_argument("--train-ids", help="comma-separated ids or 'all' (default)")
    i.add_argument("--test-data", required=True)
    i.add_argument("--label-col", default="label")
    i.add_argument("--jobs", type=int, default=1)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_influence)

    o = sub.add_parser("oracle", help="retraining or finite-difference reference values")
    o.add_argument("kind", nargs="?", choices=("fd",), help="'fd' for a finite-difference weight derivative")
    o.add_argument("--model", required=True)
    o.add_argument("--data", required=True, help="the training CSV the model was fit on")
    o.add_argument("--label-col", default="label")
    o.add_argument("--weight-col")
    o.add_argument("--test-data", help="rows to average the loss over (default: training data)")
    o.add_argument("--mode", choices=("full", "fixed"), default="fixed")
    o.add_argument("--train-id", required=True)
    o.add_argument("--eps", type=float, default=oracle.FD_EPS)
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)

    e = sub.add_parser("experiment", help="run an evaluation driver from a JSON config")
    e.add_argument("kind", choices=tuple(_DRIVERS))
    e.add_argument("--config", required=True)
    e.add_argument("--out-dir")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if getattr(args, "seed", "absent") is None:
            args.seed = default_seed()
        if getattr(args, "jobs", 1) < 1:
            raise CliError("--jobs must be >= 1")
        args.func(args)
    except (CliError, DataError, ValueError, IndexError, OSError) as exc:
        print(f"gbinfluence: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
