"""Fixed-depth gradient boosted trees that record a full training trace.

Structure selection is level-wise exact greedy search over midpoint
thresholds; every tree is a full binary tree with ``2**depth`` leaves so
leaf membership per boosting step is a dense integer vector. The learning
rate is folded into the stored leaf values:

    f_l = -lr * G_l / (H_l + l2)

where ``H_l`` is the weight sum (``formula="gradient"``) or the weighted
hessian sum (``formula="newton"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .dataio import Dataset
from .loss import LossSpec, get_loss

EPS_DEN = 1e-12
FORMULAS = ("gradient", "newton")
PASS_THROUGH = np.inf  # x < inf for every finite x: all rows go left


@dataclass(frozen=True)
class Params:
    n_trees: int = 100
    depth: int = 6
    learning_rate: float = 0.2
    l2: float = 0.0
    loss: str = "logloss"
    formula: str = "newton"
    seed: int = 0
    bias: float | None = None  # None: fit the best constant

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.formula not in FORMULAS:
            raise ValueError(f"formula must be one of {FORMULAS}, got {self.formula!r}")
        get_loss(self.loss)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def leaf_value(G, H, l2: float, lr: float):
    """``-lr * G / (H + l2)``, or 0 when the denominator is <= 1e-12."""
    G = np.asarray(G, dtype=np.float64)
    den = np.asarray(H, dtype=np.float64) + l2
    ok = den > EPS_DEN
    out = np.zeros(np.broadcast(G, den).shape)
    np.divide(-lr * G, den, out=out, where=ok)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TreeStructure:
    """Breadth-first array of ``2**depth - 1`` internal (feature, threshold) nodes."""

    depth: int
    features: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        m = 2 ** self.depth - 1
        f = np.asarray(self.features, dtype=np.int64).reshape(-1)
        t = np.asarray(self.thresholds, dtype=np.float64).reshape(-1)
        if f.shape[0] != m or t.shape[0] != m:
            raise ValueError(f"depth {self.depth} needs {m} nodes, got {f.shape[0]}/{t.shape[0]}")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "thresholds", t)

    @property
    def n_leaves(self) -> int:
        return 2 ** self.depth

    def apply(self, X) -> np.ndarray:
        """Leaf index in ``[0, 2**depth)`` for each row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            right = ~(X[rows, self.features[node]] < self.thresholds[node])
            node = 2 * node + 1 + right
        return node - (2 ** self.depth - 1)


def path(tree: TreeStructure, x) -> int:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if tree.depth and x.shape[0] <= int(tree.features.max()):
        raise ValueError(f"feature vector has {x.shape[0]} entries, tree uses index {int(tree.features.max())}")
    node = 0
    for _ in range(tree.depth):
        node = 2 * node + (1 if x[tree.features[node]] < tree.thresholds[node] else 2)
    return node - (2 ** tree.depth - 1)


@dataclass(frozen=True)
class Ensemble:
    trees: list
    leaf_values: np.ndarray  # (T, L), learning rate already applied
    learning_rate: float
    loss: str
    formula: str
    l2: float
    bias: float
    n_features: int
    depth: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_leaves(self) -> int:
        return 2 ** self.depth

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def leaf_indices(self, X) -> np.ndarray:
        """(T, m) leaf index of every row in every tree."""
        X = self._check(X)
        if not self.trees:
            return np.zeros((0, X.shape[0]), dtype=np.int64)
        return np.stack([tree.apply(X) for tree in self.trees])

    def predict_with(self, leaf_values, X=None, leaves=None) -> np.ndarray:
        """Raw prediction using an alternative (T, L) leaf table on the same structures."""
        if leaves is None:
            leaves = self.leaf_indices(X)
        out = np.full(leaves.shape[1], self.bias)
        for t in range(leaves.shape[0]):
            out += leaf_values[t, leaves[t]]
        return out

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        return self.predict_with(self.leaf_values, leaves=self.leaf_indices(X))

    def predict_proba(self, X) -> np.ndarray:
        if self.loss != "logloss":
            raise ValueError("predict_proba requires logloss")
        from scipy.special import expit

        return expit(self.predict(X))

    def with_leaf_values(self, leaf_values) -> "Ensemble":
        return replace(self, leaf_values=np.asarray(leaf_values, dtype=np.float64))


def predict(ens: Ensemble, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = ens.predict(x)
    return float(out[0]) if x.ndim == 1 else out


@dataclass
class TrainingTrace:
    """Everything needed to replay leaf fitting without the features.

    Arrays indexed ``[t, i]`` hold step-``t`` quantities (0-based ``t``):
    ``A_prev[t]`` are predictions before tree ``t`` and ``g/h/k`` are loss
    derivatives there. ``G``, ``H_G``, ``H_H`` are (T, L) leaf sums of
    ``w*g``, ``w`` and ``w*h``.
    """

    leaf_assignment: np.ndarray
    A_prev: np.ndarray
    g: np.ndarray
    h: np.ndarray
    k: np.ndarray
    G: np.ndarray
    H_G: np.ndarray
    H_H: np.ndarray
    leaf_values: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    ids: np.ndarray
    bias: float
    learning_rate: float
    l2: float
    loss: str
    formula: str
    depth: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def n_steps(self) -> int:
        return self.leaf_assignment.shape[0]

    @property
    def n_leaves(self) -> int:
        return 2 ** self.depth

    @cached_property
    def loss_spec(self) -> LossSpec:
        return get_loss(self.loss)

    def H(self, formula: str | None = None) -> np.ndarray:
        formula = formula or self.formula
        return self.H_H if formula == "newton" else self.H_G

    @property
    def A_final(self) -> np.ndarray:
        if self.n_steps == 0:
            return np.full(self.n, self.bias)
        last = self.n_steps - 1
        return self.A_prev[last] + self.leaf_values[last, self.leaf_assignment[last]]

    @cached_property
    def leaf_order(self):
        """Per step: rows sorted by leaf (stable) and (L+1) slice offsets."""
        L = self.n_leaves
        orders = np.argsort(self.leaf_assignment, axis=1, kind="stable")
        offsets = np.zeros((self.n_steps, L + 1), dtype=np.int64)
        for t in range(self.n_steps):
            offsets[t, 1:] = np.cumsum(np.bincount(self.leaf_assignment[t], minlength=L))
        return orders, offsets

    def members(self, t: int, leaf: int) -> np.ndarray:
        orders, offsets = self.leaf_order
        return orders[t, offsets[t, leaf]:offsets[t, leaf + 1]]


def fit_bias(ds: Dataset, loss) -> float:
    """Best constant prediction under the weighted loss."""
    loss = get_loss(loss)
    wsum = ds.weights.sum()
    if wsum <= 0:
        return 0.0
    rate = float(np.dot(ds.weights, ds.labels) / wsum)
    if loss.kind == "squared":
        return rate
    if rate <= 0.0:
        return -10.0
    if rate >= 1.0:
        return 10.0
    return float(np.clip(np.log(rate / (1.0 - rate)), -10.0, 10.0))


def _grow_tree(X, order, gw, hw, depth, l2):
    """Level-wise exact greedy search; returns (TreeStructure, leaf index per row)."""
    n, d = X.shape
    m = 2 ** depth - 1
    feats = np.zeros(m, dtype=np.int64)
    thrs = np.full(m, PASS_THROUGH)
    node_of = np.zeros(n, dtype=np.int64)
    for level in range(depth):
        first, count = 2 ** level - 1, 2 ** level
        local = node_of - first
        GP = np.bincount(local, gw, minlength=count)
        HP = np.bincount(local, hw, minlength=count)
        parent = _score(GP, HP, l2)
        best_gain = np.full(count, -np.inf)
        for j in range(d):
            nid = local[order[:, j]]
            perm = np.argsort(nid, kind="stable")
            idx = order[perm, j]
            nodes = nid[perm]
            x = X[idx, j]
            cg, ch = np.cumsum(gw[idx]), np.cumsum(hw[idx])
            starts = np.searchsorted(nodes, np.arange(count), side="left")
            ends = np.searchsorted(nodes, np.arange(count), side="right")
            base_g = np.where(starts > 0, cg[np.maximum(starts - 1, 0)], 0.0)
            base_h = np.where(starts > 0, ch[np.maximum(starts - 1, 0)], 0.0)
            GL = cg - base_g[nodes]
            HL = ch - base_h[nodes]
            GR = GP[nodes] - GL
            HR = HP[nodes] - HL
            gain = _score(GL, HL, l2) + _score(GR, HR, l2) - parent[nodes]
            valid = np.zeros(n, dtype=bool)
            valid[:-1] = (nodes[:-1] == nodes[1:]) & (x[:-1] < x[1:])
            gain = np.where(valid, gain, -np.inf)
            for c in range(count):
                s, e = starts[c], ends[c]
                if e - s < 2:
                    continue
                p = s + int(np.argmax(gain[s:e]))
                if gain[p] > best_gain[c]:
                    best_gain[c] = gain[p]
                    thr = 0.5 * (x[p] + x[p + 1])
                    if not x[p] < thr:
                        thr = x[p + 1]
                    feats[first + c] = j
                    thrs[first + c] = thr
        right = ~(X[np.arange(n), feats[node_of]] < thrs[node_of])
        node_of = 2 * node_of + 1 + right
    return TreeStructure(depth, feats, thrs), node_of - m


def _score(G, H, l2):
    den = H + l2
    out = np.zeros_like(G, dtype=np.float64)
    np.divide(G * G, den, out=out, where=den > EPS_DEN)
    return out


def fit(ds: Dataset, params: Params):
    """Train ``params.n_trees`` trees; returns ``(Ensemble, TrainingTrace)``."""
    if ds.n < 1:
        raise ValueError("empty dataset")
    loss = get_loss(params.loss)
    if loss.kind == "logloss" and not np.all((ds.labels == 0) | (ds.labels == 1)):
        raise ValueError("logloss requires binary labels")
    X, y, w = ds.features, ds.labels, ds.weights
    n, T, L = ds.n, params.n_trees, 2 ** params.depth
    lr, l2 = params.learning_rate, params.l2
    bias = fit_bias(ds, loss) if params.bias is None else float(params.bias)
    order = np.argsort(X, axis=0, kind="stable")

    assign = np.zeros((T, n), dtype=np.int64)
    A_prev = np.zeros((T, n))
    g_all, h_all, k_all = np.zeros((T, n)), np.zeros((T, n)), np.zeros((T, n))
    G, H_G, H_H = np.zeros((T, L)), np.zeros((T, L)), np.zeros((T, L))
    values = np.zeros((T, L))
    trees = []
    A = np.full(n, bias)
    for t in range(T):
        g, h, k = loss.grad(y, A), loss.hess(y, A), loss.third(y, A)
        gw, hw = w * g, (w * h if params.formula == "newton" else w)
        tree, leaf = _grow_tree(X, order, gw, hw, params.depth, l2)
        G[t] = np.bincount(leaf, gw, minlength=L)
        H_G[t] = np.bincount(leaf, w, minlength=L)
        H_H[t] = np.bincount(leaf, w * h, minlength=L)
        values[t] = leaf_value(G[t], H_H[t] if params.formula == "newton" else H_G[t], l2, lr)
        assign[t], A_prev[t] = leaf, A
        g_all[t], h_all[t], k_all[t] = g, h, k
        trees.append(tree)
        A = A + values[t, leaf]

    ens = Ensemble(trees, values, lr, loss.kind, params.formula, l2, bias, ds.d, params.depth)
    trace = TrainingTrace(assign, A_prev, g_all, h_all, k_all, G, H_G, H_H, values,
                          y.copy(), w.copy(), ds.ids.copy(), bias, lr, l2, loss.kind,
                          params.formula, params.depth)
    return ens, trace


def training_loss(ens: Ensemble, ds: Dataset) -> float:
    loss = get_loss(ens.loss)
    return float(np.dot(ds.weights, loss.value(ds.labels, ens.predict(ds.features))) / ds.weights.sum())
