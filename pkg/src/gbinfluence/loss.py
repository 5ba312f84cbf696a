"""Pointwise losses with derivatives up to third order in the prediction.

Every function is vectorized over numpy arrays. Logloss takes a raw score
``z`` (log-odds) and a label in {0, 1}; squared loss is ``0.5 * (z - y)**2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

LOSSES = ("logloss", "squared")


def sigmoid(z):
    return expit(z)


@dataclass(frozen=True)
class LossSpec:
    kind: str

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSSES}")

    def value(self, y, z):
        if self.kind == "logloss":
            return np.logaddexp(0.0, z) - y * z
        return 0.5 * (np.asarray(z) - y) ** 2

    def grad(self, y, z):
        if self.kind == "logloss":
            return expit(z) - y
        return np.asarray(z, dtype=np.float64) - y

    def hess(self, y, z):
        if self.kind == "logloss":
            p = expit(z)
            return p * (1.0 - p)
        return np.ones_like(np.asarray(z, dtype=np.float64) + np.asarray(y, dtype=np.float64))

    def third(self, y, z):
        if self.kind == "logloss":
            p = expit(z)
            return p * (1.0 - p) * (1.0 - 2.0 * p)
        return np.zeros_like(np.asarray(z, dtype=np.float64) + np.asarray(y, dtype=np.float64))

    def grad_hess(self, y, z):
        """First and second derivative in one pass (hot path)."""
        if self.kind == "logloss":
            p = expit(z)
            return p - y, p * (1.0 - p)
        g = z - y
        return g, np.ones_like(g)


def get_loss(loss) -> LossSpec:
    return loss if isinstance(loss, LossSpec) else LossSpec(str(loss))


def derivatives(loss, y, z):
    """Return ``(L, g, h, k)`` at prediction ``z``.

    Raises ``ValueError`` for non-finite ``z`` or a non-binary logloss label.
    """
    loss = get_loss(loss)
    z_arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z_arr)):
        raise ValueError("prediction z must be finite")
    if loss.kind == "logloss" and not np.all((np.asarray(y) == 0) | (np.asarray(y) == 1)):
        raise ValueError("logloss labels must be 0 or 1")
    out = (loss.value(y, z_arr), loss.grad(y, z_arr), loss.hess(y, z_arr), loss.third(y, z_arr))
    if z_arr.ndim == 0:
        return tuple(float(v) for v in out)
    return out
