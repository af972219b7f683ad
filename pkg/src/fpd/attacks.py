"""Byzantine adversary: colluding (LIE, IPM) and non-colluding (label flip,
sign flip) poisoning, plus the half/half mixed attack.

The adversary is strong: it sees every benign update of the round before
choosing what its clients submit.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import LabeledDataset
from .errors import AttackError, ConfigError

log = logging.getLogger(__name__)

ATTACK_KINDS = ("none", "lie", "ipm", "lf", "sf", "mixed")
LIE_FALLBACK_Z = 0.3
DEFAULT_IPM_EPSILON = 0.5


@dataclass
class AttackSpec:
    kind: str = "none"
    compromised_ids: frozenset = frozenset()
    z_max: Optional[float] = None  # None derives z from (K, f)
    epsilon: float = DEFAULT_IPM_EPSILON

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ATTACK_KINDS:
            raise ConfigError("attack", f"unknown attack {self.kind!r}; expected one of {ATTACK_KINDS}")
        self.compromised_ids = frozenset(self.compromised_ids)

    @property
    def f(self) -> int:
        return len(self.compromised_ids)

    def mixed_halves(self) -> tuple[frozenset, frozenset]:
        """(LIE half, LF half) by sorted id; the LIE half takes the extra one when f is odd."""
        ids = sorted(self.compromised_ids)
        cut = (len(ids) + 1) // 2
        return frozenset(ids[:cut]), frozenset(ids[cut:])

    def flips_labels(self, client_id) -> bool:
        if self.kind == "lf":
            return client_id in self.compromised_ids
        if self.kind == "mixed":
            return client_id in self.mixed_halves()[1]
        return False


def normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def lie_default_z(K: int, f: int, tol: float = 1e-6) -> float:
    """z with Φ(z) = (K - f - s) / (K - f), s = ⌊K/2⌋ + 1 - f, found by bisection.

    Falls back to 0.3 when the prescription gives a non-positive (or
    undefined) z.
    """
    s = K // 2 + 1 - f
    if K - f <= 0:
        return LIE_FALLBACK_Z
    target = (K - f - s) / (K - f)
    if not (0.5 < target < 1.0):
        log.info("LIE prescription gives target %.4f for K=%d f=%d; using z=%.1f", target, K, f, LIE_FALLBACK_Z)
        return LIE_FALLBACK_Z
    lo, hi = 0.0, 10.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _stack(benign_updates: Sequence) -> np.ndarray:
    if len(benign_updates) == 0:
        raise AttackError("the attack needs at least one benign update")
    return np.vstack([np.asarray(u, dtype=np.float64) for u in benign_updates])


def lie_attack(benign_updates: Sequence, f: int, K: int, z_max: Optional[float] = None) -> np.ndarray:
    """Benign mean shifted by ``z_max`` standard deviations, per coordinate."""
    X = _stack(benign_updates)
    z = lie_default_z(K, f) if z_max is None else z_max
    return X.mean(axis=0) - z * X.std(axis=0)


def ipm_attack(benign_updates: Sequence, epsilon: float = DEFAULT_IPM_EPSILON) -> np.ndarray:
    if epsilon <= 0:
        raise AttackError("IPM epsilon must be positive")
    return -epsilon * _stack(benign_updates).mean(axis=0)


def label_flip(ds: LabeledDataset, L: Optional[int] = None) -> LabeledDataset:
    L = ds.n_labels if L is None else L
    return LabeledDataset(ds.features, (L - 1) - ds.labels, ds.n_labels)


def sign_flip(honest_update) -> np.ndarray:
    return -np.asarray(honest_update, dtype=np.float64)


def craft_updates(spec: AttackSpec, updates: Mapping, K: int) -> dict:
    """Replace the deltas of compromised clients for one round.

    Args:
        spec: the attack.
        updates: id -> delta for every selected client. Compromised clients'
            entries are their honest deltas (already trained on flipped labels
            when the attack flips labels).
        K: total number of clients.

    Returns:
        A new id -> delta dict; inputs are not modified. Benign entries are
        the same array objects.
    """
    out = dict(updates)
    if spec.kind == "none" or not spec.compromised_ids:
        return out
    attackers = [k for k in sorted(updates) if k in spec.compromised_ids]
    if not attackers:
        return out
    benign = [updates[k] for k in sorted(updates) if k not in spec.compromised_ids]
    if not benign:
        # every selected client is compromised: craft from their own honest deltas
        benign = [updates[k] for k in attackers]

    if spec.kind == "lie":
        crafted = lie_attack(benign, spec.f, K, spec.z_max)
        for k in attackers:
            out[k] = crafted.copy()
    elif spec.kind == "ipm":
        crafted = ipm_attack(benign, spec.epsilon)
        for k in attackers:
            out[k] = crafted.copy()
    elif spec.kind == "sf":
        for k in attackers:
            out[k] = sign_flip(updates[k])
    elif spec.kind == "mixed":
        lie_half, _ = spec.mixed_halves()
        crafted = lie_attack(benign, spec.f, K, spec.z_max)
        for k in attackers:
            if k in lie_half:
                out[k] = crafted.copy()
    # "lf": poisoning already happened in the data
    return out
