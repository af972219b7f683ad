"""Datasets, IDX ingestion and label-skewed client partitioning."""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CENTER_SPACING = 6.0


@dataclass
class LabeledDataset:
    features: np.ndarray  # (n, dim) float64
    labels: np.ndarray  # (n,) int64
    n_labels: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.ndim != 2:
            self.features = self.features.reshape(len(self.labels), -1)
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_labels):
            raise ValueError(f"labels must lie in [0, {self.n_labels})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_labels)

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_labels)


def _class_centers(L: int, dim: int) -> np.ndarray:
    if dim >= L:
        # scaled standard basis: a regular simplex with pairwise distance CENTER_SPACING
        return np.eye(L, dim) * (CENTER_SPACING / math.sqrt(2.0))
    # too few dimensions for a simplex: square grid in the first two axes
    side = math.ceil(math.sqrt(L))
    centers = np.zeros((L, dim))
    for l in range(L):
        centers[l, 0] = CENTER_SPACING * (l % side)
        centers[l, 1] = CENTER_SPACING * (l // side)
    return centers


def generate_synthetic(n: int, L: int, dim: int, seed: int) -> LabeledDataset:
    """Gaussian blobs with unit covariance, one per label.

    Labels are assigned round-robin before shuffling, so every class is hit
    whenever ``n >= L``.
    """
    if n < L or dim < 2:
        raise ValueError("need n >= L and dim >= 2")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % L
    rng.shuffle(labels)
    X = _class_centers(L, dim)[labels] + rng.standard_normal((n, dim))
    return LabeledDataset(X, labels, L)


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Read an IDX image/label file pair (MNIST layout), optionally gzipped.

    Pixels come back as float64 in [0, 1], flattened row-major.
    """
    img = _read_bytes(images_path)
    lab = _read_bytes(labels_path)
    if len(img) < 16 or len(lab) < 8:
        raise FormatError("IDX header truncated")
    magic, n_img, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x}")
    magic, n_lab = struct.unpack(">II", lab[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad label magic 0x{magic:08x}")
    if n_img != n_lab:
        raise FormatError(f"{n_img} images but {n_lab} labels")
    pix = rows * cols
    if len(img) != 16 + n_img * pix:
        raise FormatError("image payload length does not match header")
    if len(lab) != 8 + n_lab:
        raise FormatError("label payload length does not match header")
    X = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n_img, pix).astype(np.float64) / 255.0
    y = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    L = int(y.max()) + 1 if n_lab else 0
    return LabeledDataset(X.reshape(n_img, max(pix, 1)) if n_img else np.zeros((0, pix)), y, L)


def write_idx(images_path, labels_path, images: np.ndarray, labels: Sequence[int]) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


@dataclass
class PartitionSpec:
    K: int
    q: float
    sizes: Optional[Sequence[int]] = None  # None keeps the natural assignment
    seed: int = 0


def sample_sizes(K: int, low: int, high: int, seed: int) -> list[int]:
    """Per-client training-set sizes drawn uniformly from ``[low, high]``."""
    rng = np.random.default_rng(seed)
    return [int(s) for s in rng.integers(low, high + 1, size=K)]


def check_q(q: float, L: int) -> None:
    if not (1.0 / L - 1e-12 <= q <= 1.0):
        raise ConfigError("q", f"non-IID degree {q} outside [1/L, 1] = [{1.0 / L:.4g}, 1]")


def partition_noniid(ds: LabeledDataset, spec: PartitionSpec) -> list[LabeledDataset]:
    """Split ``ds`` across ``spec.K`` clients with label skew ``spec.q``.

    Clients are assigned round-robin to ``L`` groups (client ``k`` joins group
    ``k mod L``). A sample labelled ``l`` goes to group ``l`` with probability
    ``q`` and to each other group with probability ``(1 - q) / (L - 1)``;
    inside a group it lands on a uniformly chosen member. Each client is then
    trimmed (random subset) or topped up (resampling its own samples with
    replacement) to its target size.
    """
    L = ds.n_labels
    check_q(spec.q, L)
    K = spec.K
    if K < 1:
        raise ConfigError("K", "need at least one client")
    if spec.sizes is not None and len(spec.sizes) != K:
        raise ConfigError("sizes", f"expected {K} sizes, got {len(spec.sizes)}")
    rng = np.random.default_rng(spec.seed)

    groups = [[k for k in range(K) if k % L == g] for g in range(L)]
    n = len(ds)
    stay = rng.random(n) < spec.q
    if L > 1:
        # uniform over the L - 1 groups other than the sample's own label
        other = rng.integers(0, L - 1, size=n)
        other = other + (other >= ds.labels)
        group = np.where(stay, ds.labels, other)
    else:
        group = np.zeros(n, dtype=np.int64)
    sizes_g = np.array([len(g) for g in groups])
    if np.any(sizes_g == 0):
        # fewer clients than labels: samples of empty groups move to a random non-empty one
        live = np.flatnonzero(sizes_g)
        dead = sizes_g[group] == 0
        group[dead] = rng.choice(live, size=int(dead.sum()))
    member = np.floor(rng.random(n) * sizes_g[group]).astype(np.int64)
    owner = np.array([groups[g][m] for g, m in zip(group, member)], dtype=np.int64)

    parts = []
    for k in range(K):
        idx = np.flatnonzero(owner == k)
        if spec.sizes is not None:
            target = int(spec.sizes[k])
            if len(idx) == 0 and target > 0:
                # nothing landed here: borrow from the client's group
                pool = np.flatnonzero(np.isin(owner, groups[k % L]))
                idx = pool if len(pool) else np.arange(len(ds))
                idx = rng.choice(idx, size=target, replace=True)
            elif len(idx) >= target:
                idx = np.sort(rng.choice(idx, size=target, replace=False))
            else:
                extra = rng.choice(idx, size=target - len(idx), replace=True)
                idx = np.concatenate([idx, extra])
        parts.append(ds.subset(idx))
    return parts
