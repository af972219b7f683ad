"""Four-stage server-side defense.

Stage I picks clients by Beta-sampled reputation, using whichever of a
client's overall or recent track record is worse. Stage II drops clients
whose raw updates point in nearly the same direction as another client's.
Stage III normalizes per-client momentum, projects the centered directions
onto their leading singular vector and removes the high-score cluster when
it disagrees with the rest. Stage IV runs an autoencoder, trained on
previously accepted directions, over the last-layer slice and rebuilds the
slices that reconstruct worst.

Stages I and IV feed on the verdicts of Stages II and III.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional

import numpy as np

from . import vecmath
from .errors import DegenerateMatrix, DegenerateVector, EmptyAggregation

log = logging.getLogger(__name__)

RECENT_WINDOW = 10
BOOTSTRAP_ROUNDS = 10
MIN_SELECTED = 4

DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 1.0
DEFAULT_GAMMA = 0.8
DEFAULT_LAMBDA = 0.1
DELTA_MNIST = -0.1
DELTA_CIFAR = 0.0


@dataclass
class ClientRecord:
    benign: int = 0
    malicious: int = 0
    recent: deque = field(default_factory=lambda: deque(maxlen=RECENT_WINDOW))  # True = benign
    momentum: Optional[np.ndarray] = None
    last_selected: Optional[int] = None

    def __post_init__(self):
        self.recent = deque(self.recent, maxlen=RECENT_WINDOW)

    @property
    def recent_benign(self) -> int:
        return sum(1 for v in self.recent if v)

    @property
    def recent_malicious(self) -> int:
        return sum(1 for v in self.recent if not v)

    def push(self, benign: bool) -> None:
        if benign:
            self.benign += 1
        else:
            self.malicious += 1
        self.recent.append(bool(benign))

    def beta_params(self, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> tuple[float, float]:
        """Beta parameters of the active branch (the worse of overall / recent).

        Ratios are smoothed with the prior so a fresh client is well defined.
        """
        bo, mo = self.benign, self.malicious
        br, mr = self.recent_benign, self.recent_malicious
        r_overall = (bo + alpha) / (bo + mo + alpha + beta)
        r_recent = (br + alpha) / (br + mr + alpha + beta)
        if r_overall < r_recent:
            return alpha + bo, beta + mo
        return alpha + br, beta + mr

    def beta_mean(self, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> float:
        a, b = self.beta_params(alpha, beta)
        return a / (a + b)


def select_clients(records: Mapping[Hashable, ClientRecord], t: int, alpha: float = DEFAULT_ALPHA,
                   beta: float = DEFAULT_BETA, seed=None, bootstrap: int = BOOTSTRAP_ROUNDS,
                   min_selected: int = MIN_SELECTED) -> set:
    """Reputation-weighted client selection for round ``t`` (1-based).

    Every client joins during the first ``bootstrap`` rounds. Afterwards each
    client draws ``p ~ Beta(a, b)`` from its active branch and is kept with
    probability ``p``. If fewer than ``min_selected`` clients survive, the
    highest Beta means fill the gap (lowest id first on ties).

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("Beta prior parameters must be positive")
    ids = sorted(records)
    if t <= bootstrap:
        return set(ids)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = np.array([records[k].beta_params(alpha, beta) for k in ids])
    p = rng.beta(params[:, 0], params[:, 1])
    coin = rng.random(len(ids))
    chosen = {k for k, keep in zip(ids, coin < p) if keep}
    need = min(min_selected, len(ids))
    if len(chosen) < need:
        means = params[:, 0] / params.sum(axis=1)
        order = sorted(range(len(ids)), key=lambda i: (-means[i], i))
        for i in order:
            if len(chosen) >= need:
                break
            chosen.add(ids[i])
    return chosen


def colluding_scores(updates: Mapping[Hashable, np.ndarray], gamma: float = DEFAULT_GAMMA) -> tuple[dict, set]:
    """Count, for each client, the *other* clients whose update direction is
    within cosine ``gamma`` of its own.

    Returns ``(scores, removed)``: every client with a positive score is
    removed, and so is any client that sent an all-zero update (its score is
    reported as -1).
    """
    ids = sorted(updates)
    scores, removed = {}, set()
    live = []
    for k in ids:
        if np.linalg.norm(updates[k]) == 0.0:
            scores[k] = -1
            removed.add(k)
        else:
            live.append(k)
    if live:
        U = np.vstack([vecmath.normalize(updates[k]) for k in live])
        C = np.clip(U @ U.T, -1.0, 1.0)
        np.fill_diagonal(C, -np.inf)
        counts = (C > gamma).sum(axis=1)
        for k, c in zip(live, counts):
            scores[k] = int(c)
            if c > 0:
                removed.add(k)
    return scores, removed


def update_momentum(record: ClientRecord, g, t: int, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """``g + lam**(t - t_k) * m_prev``; the record itself is not touched."""
    g = np.asarray(g, dtype=np.float64)
    if record.momentum is None or record.last_selected is None:
        return g.copy()
    gap = t - record.last_selected
    if gap <= 0:
        raise ValueError(f"round {t} is not after last selection {record.last_selected}")
    return g + lam ** gap * record.momentum


def spectral_filter(normed: Mapping[Hashable, np.ndarray], delta: float = DELTA_MNIST, seed: int = 0) -> set:
    """Remove the high outlier-score cluster of unit vectors when it points
    away from the rest.

    The centered directions are projected on their top right singular
    vector; the squared projections are split by exact 2-means. If the two
    clusters' mean directions have cosine above ``delta`` everyone stays,
    otherwise the high-score cluster is returned. A zero-length cluster mean
    counts as cosine 0.
    """
    if len(normed) < 2:
        log.info("spectral stage skipped: %d survivor(s)", len(normed))
        return set()
    G = vecmath.CenteredMatrix.from_vectors(normed)
    try:
        v, converged = vecmath.top_right_singular_vector(G, seed=seed)
    except DegenerateMatrix:
        return set()
    if not converged:
        log.info("power iteration hit the iteration cap; using last iterate")
    tau = vecmath.outlier_scores(G, v)
    high, low = vecmath.two_means_1d(tau)
    if not high:
        return set()
    m_high = vecmath.mean_vector(normed[k] for k in sorted(high))
    m_low = vecmath.mean_vector(normed[k] for k in sorted(low))
    try:
        c = vecmath.cosine(m_high, m_low)
    except DegenerateVector:
        c = 0.0
    return set() if c > delta else set(high)


class Autoencoder:
    """Single-hidden-layer tanh autoencoder with a linear output, trained by
    Adam on mean squared reconstruction error."""

    def __init__(self, dim: int, hidden: Optional[int] = None, seed: int = 0):
        self.dim = dim
        self.hidden = hidden if hidden is not None else max(8, math.ceil(dim / 4))
        rng = np.random.default_rng(seed)
        h = self.hidden
        self.params = np.concatenate([
            rng.standard_normal(dim * h) * np.sqrt(1.0 / dim), np.zeros(h),
            rng.standard_normal(h * dim) * np.sqrt(1.0 / h), np.zeros(dim),
        ])
        self._m = np.zeros_like(self.params)
        self._v = np.zeros_like(self.params)
        self._step = 0

    def unpack(self, params=None):
        p = self.params if params is None else params
        d, h = self.dim, self.hidden
        i = 0
        W1 = p[i:i + d * h].reshape(d, h); i += d * h
        b1 = p[i:i + h]; i += h
        W2 = p[i:i + h * d].reshape(h, d); i += h * d
        b2 = p[i:i + d]
        return W1, b1, W2, b2

    def reconstruct(self, X: np.ndarray, params=None) -> np.ndarray:
        W1, b1, W2, b2 = self.unpack(params)
        return np.tanh(X @ W1 + b1) @ W2 + b2

    def loss_and_grad(self, X: np.ndarray, params=None):
        """Mean over the batch of ``||x - ae(x)||^2 / dim`` and its gradient."""
        W1, b1, W2, b2 = self.unpack(params)
        X = np.atleast_2d(X)
        H = np.tanh(X @ W1 + b1)
        R = H @ W2 + b2 - X
        n = X.shape[0]
        loss = float((R ** 2).sum() / (n * self.dim))
        dR = 2.0 * R / (n * self.dim)
        dW2 = H.T @ dR
        db2 = dR.sum(axis=0)
        dpre = (dR @ W2.T) * (1.0 - H ** 2)
        dW1 = X.T @ dpre
        db1 = dpre.sum(axis=0)
        return loss, np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])

    def fit(self, X: np.ndarray, epochs: int = 5, batch: int = 32, lr: float = 0.01, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        b1, b2, eps = 0.9, 0.999, 1e-8
        loss = float("nan")
        m, v, p = self._m, self._v, self.params
        buf = np.empty_like(p)
        for _ in range(epochs):
            order = rng.permutation(len(X))
            for s in range(0, len(X), batch):
                loss, g = self.loss_and_grad(X[order[s:s + batch]])
                self._step += 1
                m *= b1
                m += (1 - b1) * g
                g *= g
                v *= b2
                v += (1 - b2) * g
                # p -= lr_t * m / (sqrt(v / c2) + eps), bias corrections folded into lr_t
                c2 = 1 - b2 ** self._step
                np.sqrt(v, out=buf)
                buf /= np.sqrt(c2)
                buf += eps
                np.divide(m, buf, out=buf)
                buf *= lr / (1 - b1 ** self._step)
                p -= buf
        return loss


@dataclass
class DenoiserState:
    autoencoder: Autoencoder
    buffer: deque = field(default_factory=lambda: deque(maxlen=500))
    warmup: int = 64
    epochs: int = 5
    batch: int = 32
    lr: float = 0.01
    seed: int = 0
    rounds: int = 0

    @classmethod
    def create(cls, slice_dim: int, seed: int = 0, capacity: int = 500, **kw) -> "DenoiserState":
        return cls(Autoencoder(slice_dim, seed=seed), deque(maxlen=capacity), seed=seed, **kw)

    def train(self) -> None:
        if not self.buffer:
            return
        X = np.vstack(self.buffer)
        self.autoencoder.fit(X, self.epochs, self.batch, self.lr, seed=self.seed + self.rounds)


def reconstruction_errors(ae, slices: Mapping[Hashable, np.ndarray]) -> dict:
    ids = sorted(slices)
    X = np.vstack([slices[k] for k in ids])
    R = ae.reconstruct(X)
    err = ((X - R) ** 2).sum(axis=1)
    return {k: float(e) for k, e in zip(ids, err)}


def denoise(normed_survivors: Mapping[Hashable, np.ndarray], state: DenoiserState,
            slc: slice) -> tuple[dict, set]:
    """Rebuild the last-layer slice of the worst-reconstructed survivors.

    Before the buffer holds ``state.warmup`` slices, vectors pass through
    untouched and every survivor's slice is banked for training. After that,
    reconstruction errors are split by 2-means: the high-error group gets
    ``ae(slice)`` spliced in (then the whole vector is re-normalized), the
    low-error group is banked. The autoencoder is retrained at the end of
    every call.
    """
    out = {k: np.asarray(v, dtype=np.float64) for k, v in normed_survivors.items()}
    denoised: set = set()
    if not out:
        return out, denoised
    slices = {k: v[slc] for k, v in out.items()}
    if len(state.buffer) < state.warmup:
        reliable = sorted(out)
    else:
        errs = reconstruction_errors(state.autoencoder, slices) if len(out) >= 2 else {}
        if len(errs) >= 2:
            high, low = vecmath.two_means_1d(errs)
        else:
            high, low = set(), set(out)
        if high:
            rebuilt = state.autoencoder.reconstruct(np.vstack([slices[k] for k in sorted(high)]))
            for k, r in zip(sorted(high), rebuilt):
                v = out[k].copy()
                v[slc] = r
                try:
                    out[k] = vecmath.normalize(v)
                    denoised.add(k)
                except DegenerateVector:
                    pass
        reliable = sorted(low)
    for k in reliable:
        state.buffer.append(slices[k].copy())
    state.train()
    state.rounds += 1
    return out, denoised


def aggregate_fpd(final_vectors: Mapping[Hashable, np.ndarray], raw_momenta: Mapping[Hashable, np.ndarray]) -> np.ndarray:
    """Median momentum norm times the mean of the surviving unit vectors."""
    if not final_vectors:
        raise EmptyAggregation("no survivors to aggregate")
    ids = sorted(final_vectors)
    direction = np.mean(np.vstack([final_vectors[k] for k in ids]), axis=0)
    scale = float(np.median([np.linalg.norm(raw_momenta[k]) for k in ids]))
    return scale * direction


@dataclass
class StageVerdicts:
    selected: set = field(default_factory=set)
    removed_colluding: set = field(default_factory=set)
    removed_spectral: set = field(default_factory=set)
    denoised: set = field(default_factory=set)

    @property
    def removed(self) -> set:
        return self.removed_colluding | self.removed_spectral

    @property
    def survivors(self) -> set:
        return self.selected - self.removed_colluding - self.removed_spectral

    def check(self) -> None:
        if self.removed_colluding & self.removed_spectral:
            raise ValueError("a client was removed by two stages")
        if not self.removed <= self.selected or not self.denoised <= self.survivors:
            raise ValueError("verdict sets are not nested in the selection")


def record_verdicts(records: Mapping[Hashable, ClientRecord], verdicts: StageVerdicts,
                    momenta: Optional[Mapping[Hashable, np.ndarray]] = None, t: Optional[int] = None):
    """Fold one round of verdicts into the reputation records (in place).

    Removed clients get a malicious mark and keep their old momentum.
    Survivors, denoised ones included, get a benign mark; when ``momenta``
    and ``t`` are given their momentum and last-selected round move forward.
    """
    verdicts.check()
    for k in sorted(verdicts.removed):
        records[k].push(False)
    for k in sorted(verdicts.survivors):
        rec = records[k]
        rec.push(True)
        if momenta is not None and k in momenta:
            rec.momentum = np.asarray(momenta[k], dtype=np.float64).copy()
            rec.last_selected = t
    return records


@dataclass
class FPDConfig:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    gamma_schedule: tuple = ()
    lam: float = DEFAULT_LAMBDA
    delta: float = DELTA_MNIST
    bootstrap: int = BOOTSTRAP_ROUNDS
    min_selected: int = MIN_SELECTED
    use_selection: bool = True
    use_colluding: bool = True
    use_spectral: bool = True
    use_denoise: bool = True
    ae_warmup: int = 64
    ae_capacity: int = 500
    ae_epochs: int = 5
    ae_batch: int = 32
    ae_lr: float = 0.01

    def gamma_at(self, t: int) -> float:
        """Stage II threshold for round ``t``; a schedule overrides ``gamma``."""
        if not self.gamma_schedule:
            return self.gamma
        return self.gamma_schedule[min(t, len(self.gamma_schedule)) - 1]


class FPDDefense:
    """Stateful server side of the four stages across rounds."""

    def __init__(self, client_ids, slc: slice, config: Optional[FPDConfig] = None, seed: int = 0):
        self.config = config or FPDConfig()
        self.slice = slc
        self.records = {k: ClientRecord() for k in sorted(client_ids)}
        self.seed = seed
        c = self.config
        self.denoiser = DenoiserState.create(
            slc.stop - slc.start, seed=seed, capacity=c.ae_capacity, warmup=c.ae_warmup,
            epochs=c.ae_epochs, batch=c.ae_batch, lr=c.ae_lr)

    def _rng(self, t: int, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, t, stream]))

    def select(self, t: int) -> set:
        c = self.config
        if not c.use_selection:
            return set(self.records)
        return select_clients(self.records, t, c.alpha, c.beta, self._rng(t, 0), c.bootstrap, c.min_selected)

    def aggregate(self, t: int, updates: Mapping[Hashable, np.ndarray]) -> tuple[np.ndarray, StageVerdicts]:
        """Run Stages II-IV on the round's updates and fold the verdicts in."""
        c = self.config
        verdicts = StageVerdicts(selected=set(updates))
        if c.use_colluding:
            _, verdicts.removed_colluding = colluding_scores(updates, c.gamma_at(t))
        else:
            verdicts.removed_colluding = {k for k, g in updates.items() if np.linalg.norm(g) == 0.0}

        momenta, normed = {}, {}
        for k in sorted(verdicts.selected - verdicts.removed_colluding):
            m = update_momentum(self.records[k], updates[k], t, c.lam)
            if np.linalg.norm(m) == 0.0:
                verdicts.removed_colluding.add(k)
                continue
            momenta[k] = m
            normed[k] = vecmath.normalize(m)

        if c.use_spectral:
            verdicts.removed_spectral = spectral_filter(normed, c.delta, seed=int(self._rng(t, 1).integers(2**31)))
        survivors = {k: normed[k] for k in sorted(normed) if k not in verdicts.removed_spectral}

        if c.use_denoise:
            survivors, verdicts.denoised = denoise(survivors, self.denoiser, self.slice)

        dim = len(next(iter(updates.values()))) if updates else 0
        try:
            agg = aggregate_fpd(survivors, momenta)
        except EmptyAggregation:
            log.warning("round %d: no survivors, applying a zero update", t)
            agg = np.zeros(dim)
        record_verdicts(self.records, verdicts, momenta, t)
        return agg, verdicts
