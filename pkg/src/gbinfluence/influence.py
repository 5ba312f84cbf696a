"""Training-sample influence for a trained ensemble with a recorded trace.

Two families:

* refit: new leaf values when one training row is removed while every tree
  keeps its structure (``leaf_refit`` exact, ``fast_leaf_refit`` with an
  update-set approximation);
* gradient: derivatives of every leaf value with respect to one row's
  weight, propagated through the boosting steps via the Jacobian of the
  intermediate predictions (``leaf_influence`` exact,
  ``fast_leaf_influence`` with an update-set approximation).

All functions are pure in ``(trace, i0, strategy)``; the trace is only read.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .gbdt import EPS_DEN, Ensemble, TrainingTrace, leaf_value
from .loss import get_loss

METHODS = ("leafrefit", "fastleafrefit", "leafinfluence", "fastleafinfluence")


@dataclass(frozen=True)
class UpdateSetStrategy:
    """Which rows' accumulated changes are propagated at each step.

    ``kind`` is one of ``single``, ``all``, ``topk``, ``sampledtopk``.
    """

    kind: str
    k: int = 0
    m: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("single", "all", "topk", "sampledtopk"):
            raise ValueError(f"unknown update-set strategy {self.kind!r}")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.kind == "sampledtopk" and self.m < 1:
            raise ValueError("m must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "UpdateSetStrategy":
        """``single`` | ``all`` | ``topk:K`` | ``sampledtopk:K:M[:SEED]``."""
        parts = text.strip().lower().split(":")
        try:
            if parts[0] == "single" and len(parts) == 1:
                return SinglePoint()
            if parts[0] == "all" and len(parts) == 1:
                return AllPoints()
            if parts[0] == "topk" and len(parts) == 2:
                return TopKLeaves(int(parts[1]))
            if parts[0] == "sampledtopk" and len(parts) in (3, 4):
                seed = int(parts[3]) if len(parts) == 4 else 0
                return SampledTopKLeaves(int(parts[1]), int(parts[2]), seed)
        except ValueError as exc:
            raise ValueError(f"bad strategy {text!r}: {exc}") from None
        raise ValueError(f"bad strategy {text!r}; expected single|all|topk:K|sampledtopk:K:M[:SEED]")

    @property
    def label(self) -> str:
        if self.kind == "topk":
            return f"topk:{self.k}"
        if self.kind == "sampledtopk":
            return f"sampledtopk:{self.k}:{self.m}:{self.seed}"
        return self.kind


def SinglePoint() -> UpdateSetStrategy:
    return UpdateSetStrategy("single")


def AllPoints() -> UpdateSetStrategy:
    return UpdateSetStrategy("all")


def TopKLeaves(k: int) -> UpdateSetStrategy:
    return UpdateSetStrategy("topk", k=k)


def SampledTopKLeaves(k: int, m: int, seed: int = 0) -> UpdateSetStrategy:
    return UpdateSetStrategy("sampledtopk", k=k, m=m, seed=seed)


@dataclass
class RefitResult:
    removed: int
    leaf_values: np.ndarray  # (T, L) refitted values, learning rate applied
    deltas: np.ndarray  # accumulated prediction change after the last step
    leaf_emptied: bool
    strategy: str


@dataclass
class InfluenceVector:
    perturbed: int
    leaf_derivatives: np.ndarray  # (T, L) d f_l^t / d w_i0
    jacobian: np.ndarray  # d A_j^T / d w_i0 for every row j
    strategy: str

    def prediction_derivative(self, ens: Ensemble, X=None, leaves=None) -> np.ndarray:
        """d F(x) / d w_i0 by routing ``x`` through the derivative leaves."""
        if leaves is None:
            leaves = ens.leaf_indices(X)
        out = np.zeros(leaves.shape[1])
        for t in range(leaves.shape[0]):
            out += self.leaf_derivatives[t, leaves[t]]
        return out


# --- update sets ----------------------------------------------------------

def _selected_leaves(trace: TrainingTrace, strategy: UpdateSetStrategy, t: int, acc) -> np.ndarray | None:
    """Leaves whose members form U^t; ``None`` means every row."""
    L = trace.n_leaves
    kind = strategy.kind
    if kind == "all" or (kind in ("topk", "sampledtopk") and strategy.k >= L):
        return None
    if kind == "single" or strategy.k == 0:
        return np.zeros(0, dtype=np.int64)
    assign = trace.leaf_assignment[t]
    if kind == "topk":
        score = np.bincount(assign, np.abs(acc), minlength=L)
    else:
        rng = np.random.default_rng((strategy.seed, t))
        sample = rng.integers(0, trace.n, size=strategy.m)
        score = np.bincount(assign[sample], np.abs(acc[sample]), minlength=L) * (trace.n / strategy.m)
    return np.sort(np.argsort(-score, kind="stable")[: strategy.k])


def _rows_of(trace: TrainingTrace, t: int, leaves) -> np.ndarray:
    orders, offsets = trace.leaf_order
    if leaves is None:
        return orders[t]
    if len(leaves) == 0:
        return orders[t, :0]
    off = offsets[t]
    return np.concatenate([orders[t, off[l]:off[l + 1]] for l in leaves])


def select_update_set(trace: TrainingTrace, strategy: UpdateSetStrategy, t: int, acc) -> np.ndarray:
    """Row indices of U^t (sorted) given step-``t`` accumulated changes ``acc``.

    ``acc`` is the accumulated prediction delta for refitting or the
    Jacobian row for influence, both as of the previous step.
    """
    acc = np.asarray(acc, dtype=np.float64)
    if acc.shape != (trace.n,):
        raise ValueError(f"acc must have length {trace.n}")
    return np.sort(_rows_of(trace, t, _selected_leaves(trace, strategy, t, acc)))


# --- refit ----------------------------------------------------------------

def _check_index(trace, i0):
    if not 0 <= int(i0) < trace.n:
        raise IndexError(f"training index {i0} out of range [0, {trace.n})")
    return int(i0)


def leaf_refit(trace: TrainingTrace, i0: int, formula: str | None = None) -> RefitResult:
    """Exact fixed-structure leave-one-out: recompute every leaf each step."""
    i0 = _check_index(trace, i0)
    formula = formula or trace.formula
    loss = trace.loss_spec
    T, L, n = trace.n_steps, trace.n_leaves, trace.n
    y = trace.labels
    w0 = trace.weights.copy()
    w0[i0] = 0.0
    delta = np.zeros(n)
    new_values = np.zeros((T, L))
    emptied = False
    for t in range(T):
        assign = trace.leaf_assignment[t]
        A_hat = trace.A_prev[t] + delta
        g, h = loss.grad_hess(y, A_hat)
        G = np.bincount(assign, w0 * g, minlength=L)
        H = np.bincount(assign, w0 * h if formula == "newton" else w0, minlength=L)
        new_values[t] = leaf_value(G, H, trace.l2, trace.learning_rate)
        emptied |= bool(np.count_nonzero(assign == assign[i0]) == 1)
        delta = delta + (new_values[t] - trace.leaf_values[t])[assign]
    return RefitResult(i0, new_values, delta, emptied, "exact")


def leaf_recalc(trace: TrainingTrace, t: int, leaf: int, i0: int, U_l, delta, formula: str | None = None) -> float:
    """New value of one leaf from cached sums corrected on ``U_l``.

    ``delta`` is the accumulated prediction change before step ``t``. When
    ``U_l`` covers every member except ``i0`` the sum is taken directly.
    """
    formula = formula or trace.formula
    loss = trace.loss_spec
    members = trace.members(t, leaf)
    U_l = np.asarray(U_l, dtype=np.int64)
    in_leaf = bool(trace.leaf_assignment[t, i0] == leaf)
    w, y = trace.weights, trace.labels
    others = members[members != i0]
    if len(others) and np.isin(others, U_l).all():
        A_hat = trace.A_prev[t, others] + delta[others]
        g, h = loss.grad_hess(y[others], A_hat)
        G = np.sum(w[others] * g)
        H = np.sum(w[others] * h) if formula == "newton" else np.sum(w[others])
        return float(leaf_value(G, H, trace.l2, trace.learning_rate))
    ind = 1.0 if in_leaf else 0.0
    G = trace.G[t, leaf]
    H = trace.H_H[t, leaf] if formula == "newton" else trace.H_G[t, leaf]
    if len(U_l):
        A = trace.A_prev[t, U_l]
        g_new, h_new = loss.grad_hess(y[U_l], A + delta[U_l])
        G = G + np.sum(w[U_l] * (g_new - trace.g[t, U_l]))
        if formula == "newton":
            H = H + np.sum(w[U_l] * (h_new - trace.h[t, U_l]))
    G = G - ind * w[i0] * trace.g[t, i0]
    H = H - ind * w[i0] * (trace.h[t, i0] if formula == "newton" else 1.0)
    return float(leaf_value(G, H, trace.l2, trace.learning_rate))


def _strategy_args(trace: TrainingTrace, strategy: UpdateSetStrategy):
    """(mode, k, samples, scale) as consumed by the compiled kernels."""
    modes = {"single": _k.MODE_SINGLE, "all": _k.MODE_ALL, "topk": _k.MODE_TOPK, "sampledtopk": _k.MODE_SAMPLED}
    samples = np.zeros((trace.n_steps, 0), dtype=np.int64)
    scale = 1.0
    if strategy.kind == "sampledtopk":
        samples = np.stack([np.random.default_rng((strategy.seed, t)).integers(0, trace.n, size=strategy.m)
                            for t in range(trace.n_steps)])
        scale = trace.n / strategy.m
    return modes[strategy.kind], int(strategy.k), samples, scale


def fast_leaf_refit(trace: TrainingTrace, i0: int, strategy: UpdateSetStrategy,
                    formula: str | None = None) -> RefitResult:
    """Leave-one-out refit where only rows in the update set get fresh derivatives.

    Leaves outside U^t keep their cached sums; the leaf holding ``i0`` only
    loses that row's contribution. Selected leaves are recomputed in full.
    """
    i0 = _check_index(trace, i0)
    newton = (formula or trace.formula) == "newton"
    orders, offsets = trace.leaf_order
    mode, k, samples, scale = _strategy_args(trace, strategy)
    values, delta, emptied = _k.refit_kernel(
        i0, trace.leaf_assignment, trace.A_prev, trace.g, trace.h, trace.leaf_values, trace.G,
        trace.H_H if newton else trace.H_G, trace.labels, trace.weights, orders, offsets,
        trace.learning_rate, trace.l2, newton, trace.loss == "logloss", mode, k, samples, scale)
    return RefitResult(i0, values, delta, bool(emptied), strategy.label)


# --- gradients ------------------------------------------------------------

def leaf_influence(trace: TrainingTrace, i0: int, formula: str | None = None) -> InfluenceVector:
    """Exact leaf-value derivatives w.r.t. the weight of row ``i0``.

    For leaf ``l`` at step ``t`` with unscaled value ``u = f / lr``:

        Newton:   d f = -lr * [1{i0 in l} (h_i0 u + g_i0) + sum_j w_j (k_j u + h_j) J_j] / (H_H + l2)
        Gradient: d f = -lr * [1{i0 in l} (u + g_i0)      + sum_j w_j h_j J_j]         / (H_G + l2)

    followed by ``J_j += d f_{leaf(j)}`` with ``J = dA^{t-1}/dw_i0``.
    """
    i0 = _check_index(trace, i0)
    formula = formula or trace.formula
    newton = formula == "newton"
    T, L, n = trace.n_steps, trace.n_leaves, trace.n
    w, lr, l2 = trace.weights, trace.learning_rate, trace.l2
    H_all = trace.H_H if newton else trace.H_G
    J = np.zeros(n)
    dF = np.zeros((T, L))
    for t in range(T):
        assign = trace.leaf_assignment[t]
        u = trace.leaf_values[t] / lr
        coef = w * (trace.k[t] * u[assign] + trace.h[t]) if newton else w * trace.h[t]
        S = np.bincount(assign, coef * J, minlength=L)
        l0 = assign[i0]
        direct = (trace.h[t, i0] * u[l0] if newton else u[l0]) + trace.g[t, i0]
        S[l0] += direct
        den = H_all[t] + l2
        np.divide(-lr * S, den, out=dF[t], where=den > EPS_DEN)
        J = J + dF[t][assign]
    return InfluenceVector(i0, dF, J, "exact")


def _run_influence(trace, idx, strategy, formula, track_jacobian):
    newton = (formula or trace.formula) == "newton"
    orders, offsets = trace.leaf_order
    mode, k, samples, scale = _strategy_args(trace, strategy)
    return _k.influence_kernel(
        np.ascontiguousarray(idx, dtype=np.int64), trace.leaf_assignment, trace.g, trace.h, trace.k,
        trace.leaf_values, trace.H_H if newton else trace.H_G, trace.weights, orders, offsets,
        trace.learning_rate, trace.l2, newton, mode, k, samples, scale, track_jacobian)


def fast_leaf_influence(trace: TrainingTrace, i0: int, strategy: UpdateSetStrategy,
                        formula: str | None = None) -> InfluenceVector:
    """Leaf derivatives with the Jacobian treated as zero outside U^t.

    The direct term for the leaf containing ``i0`` is always exact.
    """
    i0 = _check_index(trace, i0)
    dF, J = _run_influence(trace, np.array([i0]), strategy, formula, True)
    return InfluenceVector(i0, dF[0], J[0], strategy.label)


def leaf_influence_batch(trace: TrainingTrace, indices, strategy: UpdateSetStrategy | None = None,
                         formula: str | None = None, chunk: int = 256) -> np.ndarray:
    """Leaf derivatives for many rows at once, shape (B, T, L).

    Derivatives ``g, h, k`` come from the trace, so the per-step coefficient
    vector is computed once and shared by the whole batch. Under SinglePoint
    the Jacobian is never read and is not materialized. ``strategy=None``
    means exact (all rows).
    """
    strategy = strategy or AllPoints()
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    for i0 in indices:
        _check_index(trace, i0)
    single = strategy.kind == "single" or (strategy.kind != "all" and strategy.k == 0)
    out = np.zeros((len(indices), trace.n_steps, trace.n_leaves))
    for s in range(0, len(indices), chunk):
        out[s:s + chunk] = _run_influence(trace, indices[s:s + chunk], strategy, formula, not single)[0]
    return out


# --- evaluation on test points -------------------------------------------

def influence_loo(refit: RefitResult, ens: Ensemble, x_test, y_test, loss=None, leaves=None):
    """``L(y, F(x)) - L(y, F_refit(x))``; positive when removal helps ``x``."""
    loss = get_loss(loss or ens.loss)
    if leaves is None:
        leaves = ens.leaf_indices(x_test)
    before = ens.predict_with(ens.leaf_values, leaves=leaves)
    after = ens.predict_with(refit.leaf_values, leaves=leaves)
    out = loss.value(np.asarray(y_test, dtype=np.float64), before) - loss.value(np.asarray(y_test, dtype=np.float64), after)
    return float(out[0]) if np.ndim(y_test) == 0 else out


def influence_grad(iv: InfluenceVector, ens: Ensemble, x_test, y_test, loss=None, leaves=None):
    """``dL(y, F(x)) / dw_i0``; positive when up-weighting the row hurts ``x``."""
    loss = get_loss(loss or ens.loss)
    if leaves is None:
        leaves = ens.leaf_indices(x_test)
    F = ens.predict_with(ens.leaf_values, leaves=leaves)
    y = np.asarray(y_test, dtype=np.float64)
    out = loss.grad(y, F) * iv.prediction_derivative(ens, leaves=leaves)
    return float(out[0]) if np.ndim(y_test) == 0 else out


def compute(trace: TrainingTrace, i0: int, method: str, strategy: UpdateSetStrategy | None = None):
    """Dispatch by method name; returns a RefitResult or InfluenceVector."""
    method = method.lower()
    if method == "leafrefit":
        return leaf_refit(trace, i0)
    if method == "fastleafrefit":
        return fast_leaf_refit(trace, i0, strategy or AllPoints())
    if method == "leafinfluence":
        return leaf_influence(trace, i0)
    if method == "fastleafinfluence":
        return fast_leaf_influence(trace, i0, strategy or AllPoints())
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _kind(method: str) -> str:
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return "refit" if "refit" in method else "grad"


def leaf_tables(trace: TrainingTrace, indices, method: str, strategy: UpdateSetStrategy | None = None,
                vectorized: bool = True):
    """Per-row (T, L) tables for many rows: refitted leaf values or leaf derivatives.

    Returns ``(kind, tables)`` with ``kind`` in {"refit", "grad"}. Gradient
    methods use the batched path unless ``vectorized`` is false.
    """
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    kind = _kind(method)
    if method == "leafinfluence":
        strategy = AllPoints()
    if kind == "grad" and vectorized:
        return kind, leaf_influence_batch(trace, indices, strategy)
    out = np.empty((len(indices), trace.n_steps, trace.n_leaves))
    for b, i0 in enumerate(indices):
        res = compute(trace, int(i0), method, strategy)
        out[b] = res.leaf_values if kind == "refit" else res.leaf_derivatives
    return kind, out


def influence_matrix(ens: Ensemble, kind: str, tables, X=None, y=None, leaves=None) -> np.ndarray:
    """(B, m) influence of each tabled row on each test point.

    ``refit``: ``L(y, F(x)) - L(y, F_refit(x))``; ``grad``: ``dL(y, F(x))/dw``.
    """
    loss = get_loss(ens.loss)
    if leaves is None:
        leaves = ens.leaf_indices(X)
    y = np.asarray(y, dtype=np.float64)
    F = ens.predict_with(ens.leaf_values, leaves=leaves)
    acc = np.zeros((tables.shape[0], leaves.shape[1]))
    for t in range(leaves.shape[0]):
        acc += tables[:, t, leaves[t]]
    if kind == "refit":
        return loss.value(y, F)[None, :] - loss.value(y[None, :], ens.bias + acc)
    return loss.grad(y, F)[None, :] * acc


def mean_influence(ens: Ensemble, kind: str, tables, X=None, y=None, leaves=None) -> np.ndarray:
    """Influence on the average test loss, one value per tabled row."""
    return influence_matrix(ens, kind, tables, X, y, leaves).mean(axis=1)
