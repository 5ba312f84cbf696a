"""Naive ground-truth references for the influence algorithms.

Nothing here reads a training trace: leaf membership is recomputed by
routing the features through the reference trees and predictions are
rebuilt from scratch each step. Leaf sums accumulate rows in index order,
the same order the trainer uses, so untouched inputs reproduce the
reference bit for bit.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .dataio import Dataset
from .gbdt import Ensemble, Params, fit, fit_bias, leaf_value
from .loss import get_loss

FD_EPS = 1e-4


def refit_leaves(reference: Ensemble, ds: Dataset, formula: str | None = None) -> Ensemble:
    """Keep every tree's splits, refit all leaf values on ``ds`` step by step."""
    formula = formula or reference.formula
    loss = get_loss(reference.loss)
    leaves = reference.leaf_indices(ds.features)
    T, L = reference.n_trees, reference.n_leaves
    y, w = ds.labels, ds.weights
    values = np.zeros((T, L))
    A = np.full(ds.n, reference.bias)
    for t in range(T):
        g = loss.grad(y, A)
        h = loss.hess(y, A) if formula == "newton" else np.ones(ds.n)
        G = np.bincount(leaves[t], w * g, minlength=L)
        H = np.bincount(leaves[t], w * h if formula == "newton" else w, minlength=L)
        values[t] = leaf_value(G, H, reference.l2, reference.learning_rate)
        A = A + values[t, leaves[t]]
    return replace(reference, leaf_values=values, formula=formula)


def _held_bias(ds: Dataset, params: Params) -> float:
    return fit_bias(ds, params.loss) if params.bias is None else float(params.bias)


def retrain_without(ds: Dataset, params: Params, i0: int, mode: str = "fixed_structure",
                    reference: Ensemble | None = None) -> Ensemble:
    """Model trained without row ``i0``.

    ``full`` reruns the trainer (bias held at the full-data value);
    ``fixed_structure`` replays ``reference``'s splits and refits leaves.
    """
    if ds.n <= 1:
        raise ValueError("cannot leave out the only training row")
    if not 0 <= i0 < ds.n:
        raise IndexError(f"row {i0} out of range")
    reduced = ds.drop(i0)
    if mode == "full":
        bias = reference.bias if reference is not None else _held_bias(ds, params)
        ens, _ = fit(reduced, replace(params, bias=bias))
        return ens
    if mode in ("fixed", "fixed_structure"):
        if reference is None:
            raise ValueError("fixed_structure mode needs the reference ensemble")
        return refit_leaves(reference, reduced)
    raise ValueError(f"unknown mode {mode!r}")


def perturb_weight(ds: Dataset, params: Params, i0: int, new_weight: float, reference: Ensemble) -> Ensemble:
    """Fixed-structure refit with ``w[i0]`` replaced by ``new_weight``."""
    if new_weight < 0:
        raise ValueError("new_weight must be >= 0")
    return refit_leaves(reference, ds.with_weight(i0, new_weight))


def fd_prediction_derivative(ds: Dataset, params: Params, i0: int, reference: Ensemble, X, eps: float = FD_EPS):
    """Central difference of F(X) in ``w[i0]`` under fixed structure."""
    w = float(ds.weights[i0])
    lo = max(w - eps, 0.0)
    hi = w + eps
    up = perturb_weight(ds, params, i0, hi, reference).predict(X)
    dn = perturb_weight(ds, params, i0, lo, reference).predict(X)
    return (up - dn) / (hi - lo)


def fd_loss_derivative(ds: Dataset, params: Params, i0: int, reference: Ensemble, X, y, eps: float = FD_EPS):
    loss = get_loss(reference.loss)
    w = float(ds.weights[i0])
    lo, hi = max(w - eps, 0.0), w + eps
    up = loss.value(y, perturb_weight(ds, params, i0, hi, reference).predict(X))
    dn = loss.value(y, perturb_weight(ds, params, i0, lo, reference).predict(X))
    return (up - dn) / (hi - lo)


def structure_changed(a: Ensemble, b: Ensemble) -> bool:
    """True iff any split (feature or exact threshold) differs anywhere."""
    if a.n_trees != b.n_trees or a.depth != b.depth:
        raise ValueError(f"shape mismatch: {a.n_trees}x{a.depth} vs {b.n_trees}x{b.depth}")
    for ta, tb in zip(a.trees, b.trees):
        if not (np.array_equal(ta.features, tb.features) and np.array_equal(ta.thresholds, tb.thresholds)):
            return True
    return False
