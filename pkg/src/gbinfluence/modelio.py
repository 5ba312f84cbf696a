"""Versioned JSON document holding an ensemble and (optionally) its trace.

Floats are written with ``repr`` so doubles round-trip exactly. A
pass-through split threshold (+inf) is stored as ``null``.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .gbdt import Ensemble, Params, TrainingTrace, TreeStructure

FORMAT_VERSION = 1
_TRACE_STEP_ARRAYS = ("leaf_assignment", "A_prev", "g", "h", "k", "G", "H_G", "H_H")


def _thr_out(v):
    return None if np.isinf(v) else float(v)


def to_document(ens: Ensemble, trace: TrainingTrace | None = None, params: Params | None = None) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "params": params.to_dict() if params is not None else None,
        "model": {
            "learning_rate": ens.learning_rate,
            "loss": ens.loss,
            "formula": ens.formula,
            "l2": ens.l2,
            "depth": ens.depth,
            "n_features": ens.n_features,
        },
        "bias": ens.bias,
        "trees": [
            {
                "splits": [[int(f), _thr_out(v)] for f, v in zip(tree.features, tree.thresholds)],
                "leaf_values": ens.leaf_values[t].tolist(),
            }
            for t, tree in enumerate(ens.trees)
        ],
    }
    if trace is not None:
        tr = {name: getattr(trace, name).tolist() for name in _TRACE_STEP_ARRAYS}
        tr["labels"] = trace.labels.tolist()
        tr["weights"] = trace.weights.tolist()
        tr["ids"] = trace.ids.tolist()
        doc["trace"] = tr
    return doc


def from_document(doc: dict):
    """Return ``(Ensemble, TrainingTrace | None, Params | None)``."""
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    m = doc["model"]
    depth = int(m["depth"])
    trees, values = [], []
    for tr in doc["trees"]:
        splits = tr["splits"]
        feats = [s[0] for s in splits]
        thrs = [np.inf if s[1] is None else s[1] for s in splits]
        trees.append(TreeStructure(depth, feats, thrs))
        values.append(tr["leaf_values"])
    L = 2 ** depth
    leaf_values = np.asarray(values, dtype=np.float64).reshape(len(trees), L)
    ens = Ensemble(trees, leaf_values, float(m["learning_rate"]), m["loss"], m["formula"],
                   float(m["l2"]), float(doc["bias"]), int(m["n_features"]), depth)
    trace = None
    if doc.get("trace") is not None:
        tr = doc["trace"]
        T = len(trees)
        arrs = {}
        for name in _TRACE_STEP_ARRAYS:
            dtype = np.int64 if name == "leaf_assignment" else np.float64
            a = np.asarray(tr[name], dtype=dtype)
            arrs[name] = a.reshape(T, -1) if a.size or T == 0 else a.reshape(T, 0)
        trace = TrainingTrace(
            leaf_values=leaf_values.copy(), labels=np.asarray(tr["labels"], dtype=np.float64),
            weights=np.asarray(tr["weights"], dtype=np.float64), ids=np.asarray(tr["ids"]),
            bias=ens.bias, learning_rate=ens.learning_rate, l2=ens.l2, loss=ens.loss,
            formula=ens.formula, depth=depth, **arrs)
    params = Params(**doc["params"]) if doc.get("params") else None
    return ens, trace, params


def dumps(ens: Ensemble, trace: TrainingTrace | None = None, params: Params | None = None) -> str:
    return json.dumps(to_document(ens, trace, params), allow_nan=False, separators=(",", ":"))


def atomic_write_text(path, text: str) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, ens: Ensemble, trace: TrainingTrace | None = None, params: Params | None = None) -> None:
    atomic_write_text(path, dumps(ens, trace, params))


def load(path):
    with Path(path).open(encoding="utf-8") as fh:
        return from_document(json.load(fh))
