"""Ranking and classification metrics with linear gains."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def dcg(gains) -> float:
    """sum_r gain_r / log2(r + 1), ranks from 1. Negative gains allowed."""
    gains = np.asarray(gains, dtype=np.float64).reshape(-1)
    if gains.size == 0:
        return 0.0
    return float(np.sum(gains / np.log2(np.arange(2, gains.size + 2))))


def rank_desc(scores) -> np.ndarray:
    """Indices by decreasing score; ties go to the lower index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def ndcg_at_k(scores, relevance, k: int) -> float:
    """DCG of the top-k by score over the ideal top-k DCG (1.0 if ideal is 0)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=np.float64)
    if scores.shape != relevance.shape:
        raise ValueError("scores and relevance must have the same shape")
    if np.any(relevance < 0):
        raise ValueError("relevance must be non-negative")
    k = min(k, scores.size)
    ideal = dcg(np.sort(relevance)[::-1][:k])
    if ideal == 0.0:
        return 1.0
    return dcg(relevance[rank_desc(scores)[:k]]) / ideal


def shift_relevance(proxy) -> np.ndarray:
    """Map signed proxy values to non-negative gains by shifting the minimum to 0."""
    proxy = np.asarray(proxy, dtype=np.float64)
    if proxy.size == 0:
        return proxy
    return np.maximum(proxy - proxy.min(), 0.0)


def roc_auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted as 1/2."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_permutation_null(scores, labels, n_perm: int = 999, seed: int = 0):
    """AUCs of ``scores`` against ``n_perm`` random relabelings."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n = int(labels.sum()), labels.size
    if n_pos == 0 or n_pos == n:
        raise ValueError("roc_auc needs both classes")
    rng = np.random.default_rng(seed)
    ranks = rankdata(scores)
    out = np.empty(n_perm)
    for b in range(n_perm):
        pos = rng.choice(n, size=n_pos, replace=False)
        out[b] = (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * (n - n_pos))
    return out
