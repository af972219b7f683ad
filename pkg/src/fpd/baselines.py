"""Reference aggregation rules: FedAvg, Krum, FABA and coordinate median.

Krum and FABA are told the true number of attackers ``f``.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyAggregation
from .model import LocalUpdate
from .vecmath import coordinate_median

__all__ = ["fedavg", "krum", "krum_scores", "faba", "coordinate_median", "BASELINES"]


def fedavg(updates: Sequence[LocalUpdate]) -> np.ndarray:
    """Size-weighted mean of the deltas, trusting the claimed sizes."""
    if not updates:
        raise EmptyAggregation("fedavg over no updates")
    sizes = np.array([u.claimed_size for u in updates], dtype=np.float64)
    total = sizes.sum()
    if total <= 0:
        raise EmptyAggregation("total claimed size is zero")
    X = np.vstack([u.delta for u in updates])
    return (sizes / total) @ X


def _pairwise_sq(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return (diff * diff).sum(axis=2)


def krum_scores(updates: Sequence, f: int) -> np.ndarray:
    X = np.vstack(updates)
    n = len(X)
    if n < f + 3:
        raise ConfigError("f", f"krum needs n >= f + 3 (n={n}, f={f})")
    D = _pairwise_sq(X)
    m = n - f - 2
    return np.array([np.sort(np.delete(D[i], i))[:m].sum() for i in range(n)])


def krum(updates: Sequence, f: int) -> np.ndarray:
    scores = krum_scores(updates, f)
    return np.asarray(updates[int(np.argmin(scores))], dtype=np.float64).copy()


def faba(updates: Sequence, f: int) -> np.ndarray:
    X = np.vstack(updates).astype(np.float64)
    if len(X) <= f:
        raise ConfigError("f", f"faba needs n > f (n={len(X)}, f={f})")
    keep = list(range(len(X)))
    for _ in range(f):
        mu = X[keep].mean(axis=0)
        dist = np.linalg.norm(X[keep] - mu, axis=1)
        keep.pop(int(np.argmax(dist)))
    return X[keep].mean(axis=0)


BASELINES = ("fedavg", "krum", "faba", "median")
