"""Dataset container, CSV ingestion and synthetic perturbations.

All randomized helpers are pure functions of their inputs and ``seed``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed input data."""


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix + labels + per-sample weights.

    ``ids`` are stable row identifiers that survive ``flip_labels`` and
    ``filter_bias``.
    """

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray = None
    ids: np.ndarray = None
    feature_names: tuple = field(default=())

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {X.shape}")
        n, d = X.shape
        if n < 1:
            raise DataError("dataset must contain at least one row")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"non-finite feature value at row {r}, column {c}")
        y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if y.shape[0] != n:
            raise DataError(f"labels length {y.shape[0]} != n rows {n}")
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise DataError(f"weights length {w.shape[0]} != n rows {n}")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise DataError("weights must be finite and non-negative")
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids).reshape(-1)
        if ids.shape[0] != n or len(np.unique(ids)) != n:
            raise DataError("ids must be unique, one per row")
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(d))
        if len(names) != d:
            raise DataError(f"{len(names)} feature names for {d} columns")
        object.__setattr__(self, "features", _frozen(X, np.float64))
        object.__setattr__(self, "labels", _frozen(y, np.float64))
        object.__setattr__(self, "weights", _frozen(w, np.float64))
        object.__setattr__(self, "ids", _frozen(ids, ids.dtype))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def column(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise DataError(f"unknown column {name!r}") from None

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows], self.weights[rows],
                       self.ids[rows], self.feature_names)

    def drop(self, i: int) -> "Dataset":
        if self.n == 1:
            raise DataError("cannot drop the only row")
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return self.take(np.flatnonzero(keep))

    def with_weight(self, i: int, value: float) -> "Dataset":
        w = self.weights.copy()
        w[i] = value
        return Dataset(self.features, self.labels, w, self.ids, self.feature_names)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.weights, self.ids, self.feature_names)


def load_csv(path, label_column: str, weight_column: str | None = None) -> Dataset:
    """Read a comma-separated file with a mandatory header row.

    Non-numeric feature columns are ordinal-encoded in order of first
    appearance. Label and weight columns must be numeric.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = [r for r in reader if r]
    if label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not in header {header}")
    if weight_column is not None and weight_column not in header:
        raise DataError(f"{path}: weight column {weight_column!r} not in header")
    if not rows:
        raise DataError(f"{path}: no data rows")
    for r_i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r_i} has {len(row)} fields, expected {len(header)}")

    def numeric(col_idx, name, strict):
        out = np.empty(len(rows))
        for r_i, row in enumerate(rows):
            cell = row[col_idx].strip()
            try:
                v = float(cell)
            except ValueError:
                if strict:
                    raise DataError(f"{path}: row {r_i + 2}, column {name!r}: non-numeric value {cell!r}") from None
                return None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r_i + 2}, column {name!r}: non-finite value {cell!r}")
            out[r_i] = v
        return out

    feature_names, columns = [], []
    for j, name in enumerate(header):
        if name in (label_column, weight_column):
            continue
        col = numeric(j, name, strict=False)
        if col is None:
            codes: dict[str, int] = {}
            col = np.array([codes.setdefault(row[j].strip(), len(codes)) for row in rows], dtype=np.float64)
        feature_names.append(name)
        columns.append(col)
    y = numeric(header.index(label_column), label_column, strict=True)
    w = None if weight_column is None else numeric(header.index(weight_column), weight_column, strict=True)
    X = np.column_stack(columns) if columns else np.zeros((len(rows), 0))
    return Dataset(X, y, w, None, tuple(feature_names))


def write_csv(ds: Dataset, path, label_column: str = "label", weight_column: str | None = "weight") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow([*ds.feature_names, label_column] + ([weight_column] if weight_column else []))
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]] + [repr(float(ds.labels[i]))]
            if weight_column:
                row.append(repr(float(ds.weights[i])))
            wr.writerow(row)


def write_mask_csv(values, path, header: str) -> None:
    """One-column CSV used for flipped masks and retained id lists."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow([header])
        for v in values:
            wr.writerow([int(v)])


def _require_binary(y):
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be binary {0, 1}")


def flip_labels(ds: Dataset, fraction: float, seed: int):
    """Flip exactly ``round(fraction * n)`` distinct uniformly chosen labels.

    Returns ``(new_dataset, flipped_mask)``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise DataError(f"fraction must be in [0, 1], got {fraction}")
    _require_binary(ds.labels)
    k = int(round(fraction * ds.n))
    rng = np.random.default_rng(seed)
    mask = np.zeros(ds.n, dtype=bool)
    mask[rng.choice(ds.n, size=k, replace=False)] = True
    return apply_flip(ds, mask), mask


def apply_flip(ds: Dataset, mask) -> Dataset:
    _require_binary(ds.labels)
    mask = np.asarray(mask, dtype=bool)
    y = np.where(mask, 1.0 - ds.labels, ds.labels)
    return ds.with_labels(y)


@dataclass(frozen=True)
class BiasSpec:
    """Rows with ``low <= x[column] < high`` and ``y == label`` match."""

    column: str
    low: float
    high: float
    label: float

    def matches(self, ds: Dataset) -> np.ndarray:
        x = ds.features[:, ds.column(self.column)]
        return (x >= self.low) & (x < self.high) & (ds.labels == self.label)


def filter_bias(ds: Dataset, predicate: BiasSpec, keep_fraction: float, seed: int) -> Dataset:
    """Keep each matching row with probability ``keep_fraction``; others always kept."""
    if not 0.0 <= keep_fraction <= 1.0:
        raise DataError(f"keep_fraction must be in [0, 1], got {keep_fraction}")
    hit = predicate.matches(ds)
    rng = np.random.default_rng(seed)
    keep = ~hit | (rng.random(ds.n) < keep_fraction)
    return ds.take(np.flatnonzero(keep))


def train_test_split(ds: Dataset, test_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    n_test = int(round(test_fraction * ds.n))
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return ds.take(train), ds.take(test)


# --- synthetic generators -------------------------------------------------
# Each generator draws from its own stream (seed, tag) so that reusing the
# same integer seed for flipping or filtering does not correlate with the data.

def make_classification(n: int, d: int = 5, seed: int = 0, levels: int | None = None,
                        noise: float = 1.0) -> Dataset:
    """Binary task with a smooth nonlinear logit.

    ``levels`` discretizes every feature to that many integer values, which
    makes split thresholds insensitive to individual rows.
    """
    rng = np.random.default_rng((seed, 9001))
    X = rng.uniform(0.0, 1.0, size=(n, d))
    if levels is not None:
        X = np.floor(X * levels)
        Z = X / max(levels - 1, 1)
    else:
        Z = X
    coef = np.linspace(2.0, -1.0, d)
    logit = 3.0 * (Z - 0.5) @ coef + 2.0 * np.sin(3.0 * Z[:, 0]) * (Z[:, min(1, d - 1)] - 0.5)
    p = 1.0 / (1.0 + np.exp(-logit * noise))
    y = (rng.random(n) < p).astype(np.float64)
    return Dataset(X, y)


def make_regression(n: int, d: int = 3, seed: int = 0) -> Dataset:
    rng = np.random.default_rng((seed, 9002))
    X = rng.normal(size=(n, d))
    y = X[:, 0] - 0.5 * X[:, 1 % d] ** 2 + 0.3 * rng.normal(size=n)
    return Dataset(X, y)


def make_cliques(sizes: Sequence[int] = (12, 9), seed: int = 0, binary: bool = True) -> Dataset:
    """Groups that share one constant feature value each.

    Every tree can only separate the groups from each other, so leaf
    membership is the same at every boosting step.
    """
    rng = np.random.default_rng((seed, 9003))
    X = np.concatenate([np.full(s, float(g)) for g, s in enumerate(sizes)]).reshape(-1, 1)
    n = X.shape[0]
    y = (rng.random(n) < 0.5).astype(float) if binary else rng.normal(size=n)
    if binary:
        # keep both classes in every group so leaf values stay finite and nonzero
        start = 0
        for s in sizes:
            y[start], y[start + 1] = 0.0, 1.0
            start += s
    return Dataset(X, y)


def make_hospital_like(n: int, seed: int = 0, d_extra: int = 3) -> Dataset:
    """Readmission-style binary task with an ``age`` column.

    The positive rate does not depend on the [40, 50) age band, so biasing
    that band is the only source of train/test mismatch.
    """
    rng = np.random.default_rng((seed, 9004))
    age = np.floor(rng.uniform(20, 90, size=n))
    extra = np.floor(rng.uniform(0, 5, size=(n, d_extra)))
    logit = -1.6 + 0.6 * (extra[:, 0] - 2) + 0.4 * (extra[:, 1 % d_extra] - 2) + 0.01 * (age - 55)
    y = (rng.random(n) < 1 / (1 + np.exp(-logit))).astype(float)
    X = np.column_stack([age, extra])
    names = ("age",) + tuple(f"x{j}" for j in range(d_extra))
    return Dataset(X, y, feature_names=names)
