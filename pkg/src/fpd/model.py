"""One-hidden-layer MLP on a flat parameter vector, and the client-side
training / server-side update primitives of a federated round.

Flat layout (fixed for an experiment)::

    [ W1 (dim x hidden, row-major) | b1 (hidden) | W2 (hidden x L) | b2 (L) ]

``W2`` is the block between the last two layers; it is the slice the
update denoiser looks at.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Optional

import numpy as np

from .data import LabeledDataset
from .errors import EvalError, TrainError

DEFAULT_LR = 0.05
DEFAULT_BATCH = 32


@dataclass(frozen=True)
class Architecture:
    dim: int
    hidden: int
    n_labels: int

    @property
    def size(self) -> int:
        return self.dim * self.hidden + self.hidden + self.hidden * self.n_labels + self.n_labels

    @property
    def last_layer_slice(self) -> slice:
        start = self.dim * self.hidden + self.hidden
        return slice(start, start + self.hidden * self.n_labels)

    def unpack(self, params: np.ndarray):
        d, h, L = self.dim, self.hidden, self.n_labels
        i = 0
        W1 = params[i:i + d * h].reshape(d, h); i += d * h
        b1 = params[i:i + h]; i += h
        W2 = params[i:i + h * L].reshape(h, L); i += h * L
        b2 = params[i:i + L]
        return W1, b1, W2, b2

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        W1 = rng.standard_normal((self.dim, self.hidden)) * np.sqrt(2.0 / self.dim)
        W2 = rng.standard_normal((self.hidden, self.n_labels)) * np.sqrt(1.0 / self.hidden)
        return np.concatenate([W1.ravel(), np.zeros(self.hidden), W2.ravel(), np.zeros(self.n_labels)])


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Model:
    arch: Architecture
    params: np.ndarray

    @classmethod
    def create(cls, dim: int, hidden: int, n_labels: int, seed: int = 0) -> "Model":
        arch = Architecture(dim, hidden, n_labels)
        return cls(arch, arch.init_params(seed))

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.arch.size,):
            raise ValueError(f"expected {self.arch.size} parameters, got {self.params.shape}")

    def logits(self, X: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self.arch.unpack(self.params)
        return np.maximum(X @ W1 + b1, 0.0) @ W2 + b2

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.logits(X))

    def loss(self, X: np.ndarray, y: np.ndarray) -> float:
        return loss_and_grad(self.arch, self.params, X, y, with_grad=False)[0]


def loss_and_grad(arch: Architecture, params: np.ndarray, X: np.ndarray, y: np.ndarray,
                  with_grad: bool = True):
    """Mean cross-entropy of the batch and its gradient w.r.t. ``params``."""
    W1, b1, W2, b2 = arch.unpack(params)
    pre = X @ W1 + b1
    H = np.maximum(pre, 0.0)
    Z = H @ W2 + b2
    Z = Z - Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=1))
    n = len(y)
    loss = float(np.mean(logsum - Z[np.arange(n), y]))
    if not with_grad:
        return loss, None

    dZ = np.exp(Z - logsum[:, None])
    dZ[np.arange(n), y] -= 1.0
    dZ /= n
    dW2 = H.T @ dZ
    db2 = dZ.sum(axis=0)
    dpre = (dZ @ W2.T) * (pre > 0)
    dW1 = X.T @ dpre
    db1 = dpre.sum(axis=0)
    return loss, np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])


@dataclass
class LocalUpdate:
    client_id: Hashable
    delta: np.ndarray
    claimed_size: int


def local_train(w: Model, ds: LabeledDataset, E: int, lr: float = DEFAULT_LR,
                batch: int = DEFAULT_BATCH, seed: int = 0,
                client_id: Optional[Hashable] = None) -> LocalUpdate:
    """Run ``E`` epochs of shuffled mini-batch SGD from the global model.

    Returns the difference between the locally trained and the global
    parameters; ``w`` itself is left untouched.
    """
    if len(ds) == 0:
        raise TrainError(f"client {client_id!r} has an empty dataset")
    rng = np.random.default_rng(seed)
    p = w.params.copy()
    n = len(ds)
    for _ in range(E):
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            _, g = loss_and_grad(w.arch, p, ds.features[idx], ds.labels[idx])
            p -= lr * g
    return LocalUpdate(client_id, p - w.params, len(ds))


def apply_global(w: Model, agg: np.ndarray) -> Model:
    agg = np.asarray(agg, dtype=np.float64)
    if agg.shape != w.params.shape:
        raise ValueError("aggregate dimension does not match the model")
    return Model(w.arch, w.params + agg)


def evaluate(w: Model, test: LabeledDataset) -> float:
    # np.argmax returns the first maximum, i.e. ties go to the lowest label
    if len(test) == 0:
        raise EvalError("empty test set")
    pred = np.argmax(w.logits(test.features), axis=1)
    return float(np.mean(pred == test.labels))
