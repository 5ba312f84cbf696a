"""Compiled inner loops for the update-set algorithms.

Accumulation order matches the numpy reference implementations (rows in
increasing index order within each leaf), so with every row in the update
set the results agree with them to rounding of ``exp``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

EPS_DEN = 1e-12
MODE_SINGLE, MODE_ALL, MODE_TOPK, MODE_SAMPLED = 0, 1, 2, 3


@njit(cache=True, nogil=True)
def _grad_hess(logloss, y, z):
    if logloss:
        p = 1.0 / (1.0 + math.exp(-z))
        return p - y, p * (1.0 - p)
    return z - y, 1.0


@njit(cache=True, nogil=True)
def _value(G, H, l2, lr):
    den = H + l2
    if den > EPS_DEN:
        return (-lr * G) / den
    return 0.0


@njit(cache=True, nogil=True)
def _select(mode, k, t, assign, acc, samples, scale, score, sel):
    L = sel.shape[0]
    if mode == MODE_ALL:
        sel[:] = True
        return
    sel[:] = False
    if mode == MODE_SINGLE or k == 0:
        return
    if k >= L:
        sel[:] = True
        return
    score[:] = 0.0
    if mode == MODE_TOPK:
        for i in range(assign.shape[1]):
            score[assign[t, i]] += abs(acc[i])
    else:
        for s in range(samples.shape[1]):
            j = samples[t, s]
            score[assign[t, j]] += abs(acc[j])
        for l in range(L):
            score[l] *= scale
    # k passes of argmax; strict > keeps the lowest leaf index on ties
    for _ in range(k):
        best = -1
        for l in range(L):
            if not sel[l] and (best < 0 or score[l] > score[best]):
                best = l
        sel[best] = True


@njit(cache=True, nogil=True)
def refit_kernel(i0, assign, A_prev, g, h, leaf_values, G, Hc, y, w, orders, offsets,
                 lr, l2, newton, logloss, mode, k, samples, scale):
    T, n = assign.shape
    L = leaf_values.shape[1]
    delta = np.zeros(n)
    out = leaf_values.copy()
    df = np.zeros(L)
    score = np.zeros(L)
    sel = np.zeros(L, dtype=np.bool_)
    emptied = False
    for t in range(T):
        l0 = assign[t, i0]
        if offsets[t, l0 + 1] - offsets[t, l0] == 1:
            emptied = True
        _select(mode, k, t, assign, delta, samples, scale, score, sel)
        for l in range(L):
            if sel[l]:
                Gl = 0.0
                Hl = 0.0
                for p in range(offsets[t, l], offsets[t, l + 1]):
                    j = orders[t, p]
                    if j == i0:
                        continue
                    gj, hj = _grad_hess(logloss, y[j], A_prev[t, j] + delta[j])
                    Gl += w[j] * gj
                    Hl += w[j] * hj if newton else w[j]
                f = _value(Gl, Hl, l2, lr)
            elif l == l0:
                hi = h[t, i0] if newton else 1.0
                f = _value(G[t, l] - w[i0] * g[t, i0], Hc[t, l] - w[i0] * hi, l2, lr)
            else:
                f = leaf_values[t, l]
            out[t, l] = f
            df[l] = f - leaf_values[t, l]
        for i in range(n):
            delta[i] += df[assign[t, i]]
    return out, delta, emptied


@njit(cache=True, nogil=True)
def influence_kernel(idx, assign, g, h, kd, leaf_values, Hc, w, orders, offsets,
                     lr, l2, newton, mode, k, samples, scale, track_jacobian):
    B = idx.shape[0]
    T, n = assign.shape
    L = leaf_values.shape[1]
    dF = np.zeros((B, T, L))
    J = np.zeros((B, n)) if track_jacobian else np.zeros((B, 0))
    needs_sum = mode != MODE_SINGLE and k != 0 or mode == MODE_ALL
    coef = np.zeros(n)
    u = np.zeros(L)
    S = np.zeros(L)
    score = np.zeros(L)
    sel = np.zeros(L, dtype=np.bool_)
    for t in range(T):
        for l in range(L):
            u[l] = leaf_values[t, l] / lr
        if needs_sum:
            for j in range(n):
                if newton:
                    coef[j] = w[j] * (kd[t, j] * u[assign[t, j]] + h[t, j])
                else:
                    coef[j] = w[j] * h[t, j]
        for b in range(B):
            S[:] = 0.0
            if needs_sum:
                _select(mode, k, t, assign, J[b], samples, scale, score, sel)
                if mode == MODE_ALL or k >= L:
                    for j in range(n):
                        S[assign[t, j]] += coef[j] * J[b, j]
                else:
                    for l in range(L):
                        if sel[l]:
                            for p in range(offsets[t, l], offsets[t, l + 1]):
                                j = orders[t, p]
                                S[l] += coef[j] * J[b, j]
            i0 = idx[b]
            l0 = assign[t, i0]
            if newton:
                S[l0] += h[t, i0] * u[l0] + g[t, i0]
            else:
                S[l0] += u[l0] + g[t, i0]
            for l in range(L):
                den = Hc[t, l] + l2
                dF[b, t, l] = (-lr * S[l]) / den if den > EPS_DEN else 0.0
            if track_jacobian:
                for j in range(n):
                    J[b, j] += dF[b, t, assign[t, j]]
    return dF, J
