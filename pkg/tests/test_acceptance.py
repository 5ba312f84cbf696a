"""One test per acceptance criterion; each prints a PASS/FAIL line.

The experiment criteria run the shipped configs in ``configs/``.
"""

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from gbinfluence import cli, dataio, oracle
from gbinfluence import influence as inf
from gbinfluence.eval.metrics import dcg, ndcg_at_k, roc_auc
from gbinfluence.gbdt import Params, fit
from gbinfluence.influence import AllPoints, SinglePoint, TopKLeaves

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
BASE = Params(n_trees=20, depth=3, learning_rate=0.2, loss="logloss", formula="newton")


def _run_config(kind):
    return cli.run_experiment(kind, json.loads((CONFIGS / f"{kind}.json").read_text()), base=CONFIGS)


@pytest.fixture(scope="module")
def base_model():
    ds = dataio.make_classification(200, 5, seed=21)
    ens, trace = fit(ds, BASE)
    return ds, ens, trace


@pytest.fixture(scope="module")
def noise_report():
    return _run_config("noise")


def test_c01_leaf_refit_matches_loo_oracle(criterion, base_model):
    ds, ens, trace = base_model
    with criterion(1, "LeafRefit equals fixed-structure leave-one-out retraining (rel 1e-10, < 60 s)"):
        t0 = time.perf_counter()
        for i0 in np.random.default_rng(1).choice(ds.n, 25, replace=False):
            got = inf.leaf_refit(trace, int(i0)).leaf_values
            ref = oracle.retrain_without(ds, BASE, int(i0), "fixed_structure", reference=ens).leaf_values
            np.testing.assert_allclose(got, ref, rtol=1e-10, atol=0)
        elapsed = time.perf_counter() - t0
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


def test_c02_all_points_identities(criterion, base_model):
    ds, _, trace = base_model
    L = trace.leaf_values.shape[1]
    with criterion(2, "AllPoints fast paths equal the exact methods (rel 1e-14); TopK(L) selects all"):
        for i0 in range(0, ds.n, 13):
            np.testing.assert_allclose(inf.fast_leaf_refit(trace, i0, AllPoints()).leaf_values,
                                       inf.leaf_refit(trace, i0).leaf_values, rtol=1e-14, atol=0)
            a = inf.fast_leaf_influence(trace, i0, AllPoints())
            b = inf.leaf_influence(trace, i0)
            np.testing.assert_allclose(a.leaf_derivatives, b.leaf_derivatives, rtol=1e-14, atol=0)
            np.testing.assert_allclose(a.jacobian, b.jacobian, rtol=1e-14, atol=0)
        rng = np.random.default_rng(2)
        for t in range(trace.n_steps):
            acc = rng.normal(size=ds.n)
            np.testing.assert_array_equal(inf.select_update_set(trace, TopKLeaves(L), t, acc),
                                          inf.select_update_set(trace, AllPoints(), t, acc))
        for i0 in (0, 99):
            np.testing.assert_array_equal(inf.fast_leaf_refit(trace, i0, TopKLeaves(L)).leaf_values,
                                          inf.fast_leaf_refit(trace, i0, AllPoints()).leaf_values)
            np.testing.assert_array_equal(inf.fast_leaf_influence(trace, i0, TopKLeaves(L)).jacobian,
                                          inf.fast_leaf_influence(trace, i0, AllPoints()).jacobian)


@pytest.mark.parametrize("loss", ["logloss", "squared"])
@pytest.mark.parametrize("formula", ["newton", "gradient"])
def test_c03_leaf_influence_matches_finite_differences(criterion, loss, formula):
    make = dataio.make_classification if loss == "logloss" else dataio.make_regression
    full = make(205, 5, seed=31)
    ds, X = full.take(np.arange(200)), full.features[200:]
    params = Params(n_trees=20, depth=3, learning_rate=0.2, loss=loss, formula=formula)
    ens, trace = fit(ds, params)
    with criterion(3, f"LeafInfluence equals central differences, eps 1e-4, rel 1e-4 ({loss}, {formula})"):
        for i0 in np.random.default_rng(3).choice(ds.n, 10, replace=False):
            got = inf.leaf_influence(trace, int(i0)).prediction_derivative(ens, X)
            fd = oracle.fd_prediction_derivative(ds, params, int(i0), ens, X, eps=1e-4)
            np.testing.assert_allclose(got, fd, rtol=1e-4, atol=1e-12)


def test_c04_single_point_exact_on_cliques(criterion):
    ds = dataio.make_cliques((12, 9), seed=0)
    params = Params(n_trees=10, depth=1, learning_rate=0.2)
    ens, trace = fit(ds, params)
    assert np.all(trace.leaf_assignment == trace.leaf_assignment[0]), "leaf membership must be constant over steps"
    with criterion(4, "SinglePoint equals the exact methods on a two-clique dataset (rel 1e-12)"):
        for i0 in range(ds.n):
            np.testing.assert_allclose(inf.fast_leaf_refit(trace, i0, SinglePoint()).leaf_values,
                                       inf.leaf_refit(trace, i0).leaf_values, rtol=1e-12, atol=0)
            np.testing.assert_allclose(inf.fast_leaf_influence(trace, i0, SinglePoint()).leaf_derivatives,
                                       inf.leaf_influence(trace, i0).leaf_derivatives, rtol=1e-12, atol=0)


@pytest.mark.slow
def test_c05_proxy_ndcg_ordering(criterion):
    rep = _run_config("proxy")
    nd = {(r["method"], r["strategy"], r["group"]): r["ndcg"] for r in rep["rows"]}
    strategies = ["single", "topk:1", "topk:2", "topk:8", "all"]
    with criterion(5, "exact methods NDCG 1.0, FastLeafRefit Same monotone in k, Changed below influence"):
        assert rep["n_same"] >= 100 and rep["n_changed"] >= 100, (rep["n_same"], rep["n_changed"])
        assert nd[("leafrefit", "exact", "same")] == pytest.approx(1.0, abs=1e-9)
        for g in ("same", "changed"):
            assert nd[("leafinfluence", "exact", g)] == pytest.approx(1.0, abs=1e-9)
        same = [nd[("fastleafrefit", s, "same")] for s in strategies]
        assert all(b >= a for a, b in zip(same, same[1:])), same
        for s in strategies:
            assert nd[("fastleafrefit", s, "changed")] < nd[("fastleafinfluence", s, "changed")], s


@pytest.mark.slow
def test_c06_noise_detection(criterion, noise_report):
    det = noise_report["detection"]
    with criterion(6, "every method's AUC beats 0.5 + 3 sd of a 999-permutation null; oracle 1.0; detector"):
        assert noise_report["n_flipped"] == 200
        methods = [k for k in det if k not in ("detector", "oracle")]
        assert len(methods) == 8
        for m in methods:
            assert det[m]["auc"] > 0.5 + 3.0 * det[m]["null_std"], (m, det[m])
        assert det["oracle"]["auc"] == 1.0
        assert det["detector"] is not None and 0.0 <= det["detector"]["auc"] <= 1.0


@pytest.mark.slow
def test_c07_harmful_removal(criterion, noise_report):
    rem = noise_report["removal"]
    with criterion(7, "influence-ranked removal beats random removal on >= 80% of the 20 worst test points"):
        assert len(rem["curves"]) == 20
        wins = [c["influence"]["dcg_point"] > c["random"]["dcg_point"] for c in rem["curves"]]
        assert np.mean(wins) >= 0.8, np.mean(wins)


@pytest.mark.slow
def test_c08_mismatch_signs(criterion):
    rep = _run_config("mismatch")
    with criterion(8, "filtered group has the most negative mean for derivative and refit influence"):
        for method in ("leafinfluence", "leafrefit"):
            cells = rep["table"][method]
            assert min(cells, key=cells.get) == "in_y1", (method, cells)
            assert cells["in_y1"] < 0


@pytest.mark.slow
def test_c09_runtime_ordering(criterion):
    rep = _run_config("bench")
    assert rep["n_train"] >= 2000
    t = {(r["method"], r["strategy"], r["vectorized"]): r["seconds_per_object"] for r in rep["rows"]}
    with criterion(9, "FastLeafRefit single < topk:8 < all; FastLeafInfluence < FastLeafRefit per strategy"):
        refit = [t[("fastleafrefit", s, False)] for s in ("single", "topk:8", "all")]
        assert refit[0] < refit[1] < refit[2], refit
        for s in ("single", "topk:8", "all"):
            assert t[("fastleafinfluence", s, True)] < t[("fastleafrefit", s, False)], s


def _bf_dcg(gains):
    return sum(g / math.log2(r + 1) for r, g in enumerate(gains, start=1))


def _bf_ndcg(scores, rel, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ideal = _bf_dcg(sorted(rel, reverse=True)[:k])
    return 1.0 if ideal == 0 else _bf_dcg([rel[i] for i in order[:k]]) / ideal


def _bf_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    return sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg) / (len(pos) * len(neg))


def test_c10_metrics_brute_force(criterion):
    base = [0.0, 1.0, 1.0, 2.5, 3.0, 4.0]
    with criterion(10, "dcg, ndcg and roc_auc equal brute force on all permutations with n <= 6"):
        for n in range(1, 7):
            vals = base[:n]
            for perm in set(itertools.permutations(vals)):
                assert dcg(list(perm)) == pytest.approx(_bf_dcg(perm), rel=1e-12, abs=1e-15)
                scores = list(range(n))
                for k in range(1, n + 1):
                    assert ndcg_at_k(scores, list(perm), k) == pytest.approx(_bf_ndcg(scores, perm, k), rel=1e-12)
            if n >= 2:
                for labels in itertools.product((0, 1), repeat=n):
                    if 0 < sum(labels) < n:
                        for perm in set(itertools.permutations(vals)):
                            assert roc_auc(list(perm), list(labels)) == pytest.approx(_bf_auc(perm, labels),
                                                                                      abs=1e-12)
