"""Experiment drivers: proxy approximation, label noise, domain mismatch, runtime.

Each driver returns a plain ``dict`` report with a ``rows`` list (flat
table records) plus driver-specific detail; see ``reports.write_report``.
Sign convention everywhere: positive influence means the training row
hurts the test loss (removing it, or down-weighting it, lowers the loss).
"""

from __future__ import annotations

import logging
import time
from dataclasses import replace

import numpy as np

from .. import influence as inf
from ..dataio import BiasSpec, Dataset, filter_bias, flip_labels
from ..gbdt import Params, fit, fit_bias
from ..loss import get_loss, sigmoid
from ..oracle import structure_changed
from .metrics import auc_permutation_null, dcg, ndcg_at_k, rank_desc, roc_auc, shift_relevance

log = logging.getLogger(__name__)


def parse_methods(specs):
    """``["fastleafrefit:topk:8", "leafinfluence", ...]`` -> [(method, strategy)]."""
    out = []
    for spec in specs:
        if isinstance(spec, (tuple, list)):
            method, strat = spec[0], spec[1]
            strat = inf.UpdateSetStrategy.parse(strat) if isinstance(strat, str) else strat
        else:
            method, _, rest = spec.partition(":")
            strat = inf.UpdateSetStrategy.parse(rest) if rest else None
        method = method.lower()
        inf._kind(method)
        if method.startswith("fast") and strat is None:
            strat = inf.AllPoints()
        if not method.startswith("fast"):
            strat = None
        out.append((method, strat))
    return out


def method_label(method, strategy) -> str:
    return method if strategy is None else f"{method}:{strategy.label}"


def _hold_bias(ds: Dataset, params: Params) -> Params:
    if params.bias is not None:
        return params
    return replace(params, bias=fit_bias(ds, params.loss))


# --- proxy approximation --------------------------------------------------

def proxy_approx_experiment(train: Dataset, test: Dataset, params: Params, methods, k_ndcg: int = 100,
                            sample_per_group: int = 100, seed: int = 0, n_test: int | None = 50,
                            candidates: int | None = None):
    """NDCG@k of each method's ranking against its proxy, split by structure change.

    Refit methods are scored against actual leave-one-out retraining; gradient
    methods against the exact weight derivative. Training rows are split into
    ``same`` (retraining kept every split) and ``changed``.
    """
    methods = parse_methods(methods)
    params = _hold_bias(train, params)
    rng = np.random.default_rng(seed)
    ens, trace = fit(train, params)
    loss = get_loss(params.loss)

    pool = np.arange(train.n) if candidates is None or candidates >= train.n else \
        np.sort(rng.choice(train.n, size=candidates, replace=False))
    test_idx = np.arange(test.n) if n_test is None or n_test >= test.n else \
        np.sort(rng.choice(test.n, size=n_test, replace=False))
    Xt, yt = test.features[test_idx], test.labels[test_idx]
    leaves_t = ens.leaf_indices(Xt)
    F = ens.predict_with(ens.leaf_values, leaves=leaves_t)

    changed = np.zeros(len(pool), dtype=bool)
    loo_pred = np.zeros((len(pool), len(test_idx)))
    for c, i0 in enumerate(pool):
        retrained, _ = fit(train.drop(int(i0)), params)
        changed[c] = structure_changed(ens, retrained)
        loo_pred[c] = retrained.predict(Xt)
    proxy1 = loss.value(yt, F)[None, :] - loss.value(yt[None, :], loo_pred)

    groups = {}
    for name, mask in (("same", ~changed), ("changed", changed)):
        members = np.flatnonzero(mask)
        if len(members) > sample_per_group:
            members = np.sort(rng.choice(members, size=sample_per_group, replace=False))
        groups[name] = members
    chosen = np.unique(np.concatenate(list(groups.values()))).astype(np.int64)
    rows_of = {int(c): r for r, c in enumerate(chosen)}

    _, exact_grad = inf.leaf_tables(trace, pool[chosen], "leafinfluence")
    proxy2 = inf.influence_matrix(ens, "grad", exact_grad, y=yt, leaves=leaves_t)

    rows = []
    for method, strat in methods:
        kind, tables = inf.leaf_tables(trace, pool[chosen], method, strat)
        scores = inf.influence_matrix(ens, kind, tables, y=yt, leaves=leaves_t)
        for gname, members in groups.items():
            if len(members) == 0:
                rows.append(dict(method=method, strategy=_slabel(strat), group=gname, ndcg=None,
                                 k_eff=0, n_candidates=0))
                continue
            r = np.array([rows_of[int(c)] for c in members])
            truth = proxy1[members] if kind == "refit" else proxy2[r]
            k_eff = min(k_ndcg, len(members))
            vals = [ndcg_at_k(scores[r, j], shift_relevance(truth[:, j]), k_eff) for j in range(len(test_idx))]
            rows.append(dict(method=method, strategy=_slabel(strat), group=gname, ndcg=float(np.mean(vals)),
                             k_eff=k_eff, n_candidates=int(len(members))))
    return {
        "experiment": "proxy",
        "params": params.to_dict(),
        "n_train": train.n,
        "n_test_points": int(len(test_idx)),
        "n_same": int((~changed).sum()),
        "n_changed": int(changed.sum()),
        "rows": rows,
    }


def _slabel(strat):
    return "exact" if strat is None else strat.label


# --- label noise ----------------------------------------------------------

def detector_scores(ens, ds: Dataset) -> np.ndarray:
    """Model probability of the class opposite to each row's observed label."""
    p = sigmoid(ens.predict(ds.features))
    return np.where(ds.labels == 1, 1.0 - p, p)


def _loo_mean_change(train, params, X, y, ens):
    loss = get_loss(params.loss)
    base = loss.value(y, ens.predict(X))
    out = np.zeros(train.n)
    for i in range(train.n):
        m, _ = fit(train.drop(i), params)
        out[i] = np.mean(base - loss.value(y, m.predict(X)))
    return out


def removal_curve(train: Dataset, params: Params, order, batch: int, n_batches: int, x, y, Xall, yall,
                  base_point: float, base_all: float):
    """Relative loss reductions after removing ``order`` cumulatively in batches."""
    loss = get_loss(params.loss)
    on_point, on_all = [], []
    for b in range(1, n_batches + 1):
        keep = np.ones(train.n, dtype=bool)
        keep[order[: b * batch]] = False
        m, _ = fit(train.take(np.flatnonzero(keep)), params)
        lp = float(loss.value(y, m.predict(x.reshape(1, -1))[0]))
        la = float(np.mean(loss.value(yall, m.predict(Xall))))
        on_point.append((base_point - lp) / base_point)
        on_all.append((base_all - la) / base_all)
    return on_point, on_all


def noise_experiment(train: Dataset, test: Dataset, params: Params, flip_fraction: float, methods,
                     seed: int = 0, n_perm: int = 999, loo_baseline: bool = False,
                     removal_method: str | None = None, n_worst: int = 50, batch_size: int = 50,
                     n_batches: int = 5):
    """Noise detection AUCs (part A) and targeted removal curves (part B)."""
    methods = parse_methods(methods)
    noisy, mask = flip_labels(train, flip_fraction, seed)
    params_n = _hold_bias(noisy, params)
    ens, trace = fit(noisy, params_n)
    leaves_t = ens.leaf_indices(test.features)
    everyone = np.arange(noisy.n)

    scores, matrices, timings = {}, {}, {}
    for method, strat in methods:
        label = method_label(method, strat)
        t0 = time.perf_counter()
        kind, tables = inf.leaf_tables(trace, everyone, method, strat)
        matrices[label] = inf.influence_matrix(ens, kind, tables, y=test.labels, leaves=leaves_t)
        scores[label] = matrices[label].mean(axis=1)
        timings[label] = time.perf_counter() - t0
        log.info("noise: %s done in %.1fs", label, timings[label])
    scores["detector"] = detector_scores(ens, noisy)
    scores["oracle"] = mask.astype(float)
    if loo_baseline:
        scores["leave-one-out"] = _loo_mean_change(noisy, params_n, test.features, test.labels, ens)

    rows = []
    detection = {}
    for name, s in scores.items():
        if mask.all() or not mask.any():
            rows.append(dict(part="A", method=name, auc=None, null_mean=None, null_std=None, significant=None))
            detection[name] = None
            continue
        auc = roc_auc(s, mask)
        null = auc_permutation_null(s, mask, n_perm=n_perm, seed=seed + 1)
        sig = bool(auc > 0.5 + 3.0 * null.std())
        detection[name] = dict(auc=auc, null_mean=float(null.mean()), null_std=float(null.std()), significant=sig)
        rows.append(dict(part="A", method=name, **detection[name]))

    removal = None
    if removal_method is not None and mask.any():
        removal = _removal_part(train, noisy, test, params, params_n, ens, matrices, removal_method,
                                n_worst, batch_size, n_batches, seed)
        rows.extend(removal.pop("rows"))
    return {
        "experiment": "noise",
        "params": params_n.to_dict(),
        "flip_fraction": flip_fraction,
        "n_flipped": int(mask.sum()),
        "flipped_ids": noisy.ids[mask].tolist(),
        "detection": detection,
        "timings": timings,
        "removal": removal,
        "rows": rows,
    }


def _removal_part(clean, noisy, test, params, params_n, ens, matrices, removal_method, n_worst,
                  batch_size, n_batches, seed):
    loss = get_loss(params.loss)
    clean_model, _ = fit(clean, _hold_bias(clean, params))
    before = loss.value(test.labels, clean_model.predict(test.features))
    after = loss.value(test.labels, ens.predict(test.features))
    worst = rank_desc(after - before)[: min(n_worst, test.n)]
    label = method_label(*parse_methods([removal_method])[0])
    if label not in matrices:
        raise ValueError(f"removal method {label!r} must be among the scored methods {sorted(matrices)}")
    M = matrices[label]
    base_all = float(np.mean(after))
    rng = np.random.default_rng(seed + 7)
    curves, rows = [], []
    for j in worst:
        x, y = test.features[j], test.labels[j]
        orders = {"influence": rank_desc(M[:, j]), "random": rng.permutation(noisy.n)}
        rec = {"test_index": int(j), "loss_increase": float(after[j] - before[j])}
        for name, order in orders.items():
            on_point, on_all = removal_curve(noisy, params_n, order, batch_size, n_batches, x, y,
                                             test.features, test.labels, float(after[j]), base_all)
            rec[name] = dict(on_point=on_point, on_test=on_all, dcg_point=dcg(on_point), dcg_test=dcg(on_all))
        curves.append(rec)
        rows.append(dict(part="B", method=label, test_index=int(j),
                         dcg_point_influence=rec["influence"]["dcg_point"],
                         dcg_point_random=rec["random"]["dcg_point"],
                         dcg_test_influence=rec["influence"]["dcg_test"],
                         dcg_test_random=rec["random"]["dcg_test"]))
    wins = np.mean([c["influence"]["dcg_point"] > c["random"]["dcg_point"] for c in curves]) if curves else None
    return {
        "method": label,
        "batch_size": batch_size,
        "n_batches": n_batches,
        "curves": curves,
        "win_fraction_point": None if wins is None else float(wins),
        "mean_dcg_point": {k: float(np.mean([c[k]["dcg_point"] for c in curves])) for k in ("influence", "random")},
        "mean_dcg_test": {k: float(np.mean([c[k]["dcg_test"] for c in curves])) for k in ("influence", "random")},
        "rows": rows,
    }


# --- domain mismatch ------------------------------------------------------

def mismatch_experiment(train: Dataset, test: Dataset, params: Params, bias_spec: BiasSpec,
                        keep_fraction: float, methods, sample_per_group: int = 100, seed: int = 0):
    """Average influence on the focus test subset per (in-range, label) training group.

    The focus subset is the test rows inside ``bias_spec``'s feature range.
    Refit methods report mean test-loss reduction on removal; gradient methods
    report the derivative of the mean focus loss w.r.t. the row weight.
    """
    methods = parse_methods(methods)
    biased = filter_bias(train, bias_spec, keep_fraction, seed)
    params_b = _hold_bias(biased, params)
    ens, trace = fit(biased, params_b)
    col = test.column(bias_spec.column)
    focus = (test.features[:, col] >= bias_spec.low) & (test.features[:, col] < bias_spec.high)
    if not focus.any():
        raise ValueError("no test rows fall in the focus range")
    Xf, yf = test.features[focus], test.labels[focus]
    leaves_f = ens.leaf_indices(Xf)

    bcol = biased.features[:, biased.column(bias_spec.column)]
    in_range = (bcol >= bias_spec.low) & (bcol < bias_spec.high)
    rng = np.random.default_rng(seed + 3)
    groups = {}
    for inside in (True, False):
        for label in (1.0, 0.0):
            members = np.flatnonzero((in_range == inside) & (biased.labels == label))
            if len(members) > sample_per_group:
                members = np.sort(rng.choice(members, size=sample_per_group, replace=False))
            groups[(inside, label)] = members
    chosen = np.unique(np.concatenate(list(groups.values()))).astype(np.int64)
    pos = {int(c): r for r, c in enumerate(chosen)}

    rows, table = [], {}
    for method, strat in methods:
        label = method_label(method, strat)
        kind, tables = inf.leaf_tables(trace, chosen, method, strat)
        mean_inf = inf.mean_influence(ens, kind, tables, y=yf, leaves=leaves_f)
        table[label] = {}
        for (inside, y), members in groups.items():
            key = f"{'in' if inside else 'out'}_y{int(y)}"
            if len(members) == 0:
                table[label][key] = None
                rows.append(dict(method=label, group=key, mean=None, std=None, count=0))
                continue
            vals = mean_inf[[pos[int(m)] for m in members]]
            table[label][key] = float(vals.mean())
            rows.append(dict(method=label, group=key, mean=float(vals.mean()), std=float(vals.std()),
                             count=int(len(members))))
    return {
        "experiment": "mismatch",
        "params": params_b.to_dict(),
        "bias_spec": dict(column=bias_spec.column, low=bias_spec.low, high=bias_spec.high, label=bias_spec.label),
        "keep_fraction": keep_fraction,
        "n_train_before": train.n,
        "n_train_after": biased.n,
        "n_focus_test": int(focus.sum()),
        "group_sizes": {f"{'in' if k[0] else 'out'}_y{int(k[1])}": int(len(v)) for k, v in groups.items()},
        "table": table,
        "retained_ids": biased.ids.tolist(),
        "rows": rows,
    }


# --- runtime --------------------------------------------------------------

def runtime_bench(ds: Dataset, params: Params, methods, k_objects: int = 100, seed: int = 0,
                  repeats: int = 1):
    """Wall-clock seconds per training object for each (method, strategy).

    Refit methods run one object at a time. Gradient methods are timed both
    through the batched path (``vectorized``) and one object at a time.
    The first object of each configuration is a warm-up and not counted.
    """
    methods = parse_methods(methods)
    params = _hold_bias(ds, params)
    ens, trace = fit(ds, params)
    rng = np.random.default_rng(seed)
    objs = rng.choice(ds.n, size=min(k_objects, ds.n), replace=False)
    trace.leaf_order  # build the per-step sort outside the timed region
    rows = []
    for method, strat in methods:
        kind = inf._kind(method)
        variants = [False, True] if kind == "grad" else [False]
        for vec in variants:
            best = np.inf
            for _ in range(repeats):
                if vec:
                    inf.leaf_influence_batch(trace, objs[:1], strat)
                    t0 = time.perf_counter()
                    inf.leaf_influence_batch(trace, objs, strat)
                    elapsed = time.perf_counter() - t0
                else:
                    inf.compute(trace, int(objs[0]), method, strat)
                    t0 = time.perf_counter()
                    for i0 in objs:
                        inf.compute(trace, int(i0), method, strat)
                    elapsed = time.perf_counter() - t0
                best = min(best, elapsed)
            rows.append(dict(method=method, strategy=_slabel(strat), vectorized=vec,
                             seconds_per_object=best / len(objs), k_objects=int(len(objs))))
    return {"experiment": "bench", "params": params.to_dict(), "n_train": ds.n, "rows": rows}
