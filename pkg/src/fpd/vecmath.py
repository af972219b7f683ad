"""Flat-vector numerical kernel.

Every defense in the package works on flat float64 parameter vectors
(plain 1-D ``numpy.ndarray``). This module holds the geometry shared by
them: cosine similarity, normalization, the leading right singular vector
of a centered matrix, projection-based outlier scores, an exact 2-means
for scalars, and the coordinate-wise median.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ClusterError, DegenerateMatrix, DegenerateVector, EmptyAggregation, NonFiniteError

POWER_TOL = 1e-10
POWER_MAX_ITER = 500
# centered rows below this magnitude are treated as exactly zero
ZERO_ROW_ATOL = 1e-12
# scores this close (relative) count as all equal, e.g. the two mirrored rows when n = 2
TIE_RTOL = 1e-9


def param_vector(values) -> np.ndarray:
    """Build a ParamVector: a finite, non-empty, 1-D float64 array."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("parameter vector must have dimension > 0")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("parameter vector contains NaN or Inf")
    return arr


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dim(a, b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVector("cosine of a zero-norm vector is undefined")
    c = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, c))


def normalize(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise DegenerateVector("cannot normalize a zero-norm vector")
    return a / n


@dataclass(frozen=True)
class CenteredMatrix:
    """Rows ``x_k - mean(x)`` with the client id of each row."""

    rows: np.ndarray
    row_ids: tuple

    @classmethod
    def from_vectors(cls, vectors: Mapping[Hashable, np.ndarray]) -> "CenteredMatrix":
        ids = tuple(sorted(vectors))
        X = np.vstack([np.asarray(vectors[k], dtype=np.float64) for k in ids])
        return cls(rows=X - X.mean(axis=0), row_ids=ids)

    @property
    def mean_free(self) -> bool:
        n, d = self.rows.shape
        return bool(np.all(np.abs(self.rows.sum(axis=0)) <= 1e-9 * n * d))


def top_right_singular_vector(G, seed: int = 0, tol: float = POWER_TOL,
                              max_iter: int = POWER_MAX_ITER) -> tuple[np.ndarray, bool]:
    """Leading right singular vector of ``G`` by power iteration on GᵀG.

    Args:
        G: a :class:`CenteredMatrix` or a 2-D array with at least two rows.
        seed: seeds the random start vector.
        tol: stop once successive unit iterates, sign-aligned, differ by
            less than ``tol`` in L2 norm.
        max_iter: iteration cap.

    Returns:
        ``(v, converged)``. ``v`` has unit norm and its largest-magnitude
        entry is positive. When the cap is hit the last iterate is
        returned with ``converged=False``.

    Raises:
        DegenerateMatrix: all rows are (numerically) zero.
    """
    M = G.rows if isinstance(G, CenteredMatrix) else np.asarray(G, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 2:
        raise ValueError("need a 2-D matrix with at least two rows")
    if not np.any(np.abs(M) > ZERO_ROW_ATOL):
        raise DegenerateMatrix("all rows of the centered matrix are zero")

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(M.shape[1])
    x /= np.linalg.norm(x)
    converged = False
    for _ in range(max_iter):
        y = M.T @ (M @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # start vector orthogonal to the row space; restart elsewhere
            y = rng.standard_normal(M.shape[1])
            ny = np.linalg.norm(y)
        y /= ny
        if np.dot(x, y) < 0:
            y = -y
        done = float(np.linalg.norm(y - x)) < tol
        x = y
        if done:
            converged = True
            break
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    return x, converged


def outlier_scores(G: CenteredMatrix, v) -> dict:
    """Squared projection of each centered row onto ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if G.rows.shape[1] != v.shape[0]:
        raise ValueError("dimension mismatch between rows and direction")
    proj = G.rows @ v
    return {k: float(p * p) for k, p in zip(G.row_ids, proj)}


def _split_sse(sorted_vals: np.ndarray, i: int) -> float:
    lo, hi = sorted_vals[:i], sorted_vals[i:]
    return float(((lo - lo.mean()) ** 2).sum() + ((hi - hi.mean()) ** 2).sum())


def two_means_1d(scores) -> tuple[set, set]:
    """Optimal 2-clustering of scalar scores.

    The optimum for scalars is a contiguous split of the sorted values, so
    every split point is scanned. Among splits whose within-cluster SSE ties
    (relative tolerance 1e-12), the one with fewer points in the upper
    cluster wins. Scores that agree to a relative 1e-9 count as all equal.

    Args:
        scores: mapping or iterable of ``(id, value)`` pairs.

    Returns:
        ``(upper, lower)`` id sets; ``upper`` has the larger mean. If all
        values are equal nothing stands out and ``upper`` is empty.
    """
    items = list(scores.items()) if isinstance(scores, Mapping) else list(scores)
    if len(items) < 2:
        raise ClusterError("2-means needs at least two points")
    # sort by value, then by id so equal values have a fixed order
    items.sort(key=lambda kv: (kv[1], _sort_key(kv[0])))
    vals = np.array([v for _, v in items], dtype=np.float64)
    if vals[-1] - vals[0] <= TIE_RTOL * max(abs(vals[0]), abs(vals[-1])):
        return set(), {k for k, _ in items}

    n = len(vals)
    scale = max(1.0, float(((vals - vals.mean()) ** 2).sum()))
    best_i, best = None, np.inf
    # i = size of the lower cluster; scanning downward visits small upper clusters first
    for i in range(n - 1, 0, -1):
        if vals[i - 1] == vals[i]:
            continue  # never separate equal values
        sse = _split_sse(vals, i)
        if sse < best - 1e-12 * scale:
            best_i, best = i, sse
    upper = {k for k, _ in items[best_i:]}
    lower = {k for k, _ in items[:best_i]}
    return upper, lower


def _sort_key(k):
    return (0, k) if isinstance(k, (int, np.integer)) else (1, str(k))


def coordinate_median(updates: Sequence) -> np.ndarray:
    if len(updates) == 0:
        raise EmptyAggregation("median of an empty set of updates")
    X = np.vstack([np.asarray(u, dtype=np.float64) for u in updates])
    return np.median(X, axis=0)


def mean_vector(vectors: Iterable) -> np.ndarray:
    vectors = list(vectors)
    if not vectors:
        raise EmptyAggregation("mean of an empty set of vectors")
    return np.mean(np.vstack(vectors), axis=0)
