"""Experiment configuration and its flat ``key = value`` file format.

One setting per line, ``#`` starts a comment::

    K = 20
    f = 6
    attack = lie      # none | lie | ipm | lf | sf | mixed
    defense = fpd     # fpd | fedavg | krum | faba | median
"""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .attacks import ATTACK_KINDS, DEFAULT_IPM_EPSILON
from .baselines import BASELINES
from .defense import DELTA_CIFAR, DELTA_MNIST, FPDConfig
from .errors import ConfigError

DEFENSES = ("fpd",) + BASELINES
SEED_ENV = "FPD_SEED"
ALIASES = {"lambda": "lam", "gamma_t": "gamma"}


@dataclass
class ExperimentConfig:
    # federation
    K: int = 50
    f: int = 15
    T: int = 100
    E: int = 3
    lr: float = 0.05
    batch: int = 32
    # data
    dataset: str = "synthetic"  # synthetic | idx
    n_labels: int = 10
    dim: int = 20
    n_train: int = 10000
    n_test: int = 2000
    q: float = 0.5
    size_low: int = 10
    size_high: int = 500
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    hidden: int = 64
    # attack
    attack: str = "none"
    z_max: Optional[float] = None
    epsilon: float = DEFAULT_IPM_EPSILON
    # defense
    defense: str = "fpd"
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.8
    gamma_schedule: str = ""  # per-round values, space separated; the last one repeats
    lam: float = 0.1
    task_profile: str = "mnist"  # mnist -> delta -0.1, cifar -> delta 0
    delta: Optional[float] = None
    stage_selection: bool = True
    stage_colluding: bool = True
    stage_spectral: bool = True
    stage_denoise: bool = True
    ae_warmup: int = 64
    ae_capacity: int = 500
    ae_epochs: int = 5
    ae_batch: int = 32
    ae_lr: float = 0.01
    # seeds: the per-stream seeds default to values derived from `seed`
    seed: int = 0
    seed_data: Optional[int] = None
    seed_training: Optional[int] = None
    seed_selection: Optional[int] = None
    seed_attack: Optional[int] = None
    repetitions: int = 3
    output: str = ""

    def stream_seed(self, name: str) -> int:
        explicit = getattr(self, f"seed_{name}")
        if explicit is not None:
            return explicit
        stream = ("data", "training", "selection", "attack").index(name)
        return int(np.random.SeedSequence([self.seed, stream]).generate_state(1)[0])

    @property
    def effective_delta(self) -> float:
        if self.delta is not None:
            return self.delta
        return DELTA_CIFAR if self.task_profile == "cifar" else DELTA_MNIST

    def gammas(self) -> tuple:
        try:
            return tuple(float(x) for x in self.gamma_schedule.replace(",", " ").split())
        except ValueError:
            raise ConfigError("gamma_schedule", f"cannot parse {self.gamma_schedule!r}") from None

    def fpd_config(self) -> FPDConfig:
        return FPDConfig(
            alpha=self.alpha, beta=self.beta, gamma=self.gamma, gamma_schedule=self.gammas(), lam=self.lam, delta=self.effective_delta,
            use_selection=self.stage_selection, use_colluding=self.stage_colluding,
            use_spectral=self.stage_spectral, use_denoise=self.stage_denoise,
            ae_warmup=self.ae_warmup, ae_capacity=self.ae_capacity, ae_epochs=self.ae_epochs,
            ae_batch=self.ae_batch, ae_lr=self.ae_lr)

    def validate(self) -> "ExperimentConfig":
        if self.K < 1:
            raise ConfigError("K", "need at least one client")
        if not 0 <= self.f < self.K:
            raise ConfigError("f", f"need 0 <= f < K, got f={self.f}, K={self.K}")
        if self.T < 1:
            raise ConfigError("T", "need at least one round")
        if self.E < 1:
            raise ConfigError("E", "need at least one local epoch")
        if self.n_labels < 2:
            raise ConfigError("n_labels", "need at least two labels")
        if not (1.0 / self.n_labels - 1e-12 <= self.q <= 1.0):
            raise ConfigError("q", f"must lie in [1/L, 1], got {self.q}")
        if self.attack not in ATTACK_KINDS:
            raise ConfigError("attack", f"unknown attack {self.attack!r}")
        if self.defense not in DEFENSES:
            raise ConfigError("defense", f"unknown defense {self.defense!r}")
        if self.dataset not in ("synthetic", "idx"):
            raise ConfigError("dataset", f"unknown dataset {self.dataset!r}")
        if self.dataset == "idx" and not (self.idx_train_images and self.idx_train_labels
                                          and self.idx_test_images and self.idx_test_labels):
            raise ConfigError("dataset", "idx dataset needs all four idx_* paths")
        if self.task_profile not in ("mnist", "cifar"):
            raise ConfigError("task_profile", "expected mnist or cifar")
        if not all(-1.0 <= g <= 1.0 for g in (self.gamma,) + self.gammas()):
            raise ConfigError("gamma", "cosine thresholds must lie in [-1, 1]")
        if not 0 < self.lam < 1:
            raise ConfigError("lam", "must lie in (0, 1)")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha" if self.alpha <= 0 else "beta", "must be positive")
        if self.epsilon <= 0:
            raise ConfigError("epsilon", "must be positive")
        if not 1 <= self.size_low <= self.size_high:
            raise ConfigError("size_low", "need 1 <= size_low <= size_high")
        if self.repetitions < 1:
            raise ConfigError("repetitions", "need at least one repetition")
        if self.defense == "krum" and self.K < self.f + 3:
            raise ConfigError("f", "krum needs K >= f + 3")
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_HINTS = None


def _hints():
    global _HINTS
    if _HINTS is None:
        _HINTS = typing.get_type_hints(ExperimentConfig)
    return _HINTS


def _coerce(key: str, raw: str):
    hint = _hints()[key]
    raw = raw.strip()
    optional = typing.get_origin(hint) is typing.Union
    if optional:
        if raw.lower() in ("", "none", "null"):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {hint.__name__}") from None


def canonical_key(key: str) -> str:
    key = ALIASES.get(key.strip(), key.strip())
    if key not in _hints():
        raise ConfigError(key, "unknown configuration key")
    return key


def parse_config_text(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = canonical_key(key)
        values[key] = _coerce(key, raw)
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load_config(path, apply_env: bool = True) -> ExperimentConfig:
    cfg = parse_config_text(Path(path).read_text())
    if apply_env and os.environ.get(SEED_ENV):
        cfg = cfg.replace(seed=_coerce("seed", os.environ[SEED_ENV]))
    return cfg


def apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    changes = {}
    for key, raw in overrides.items():
        key = canonical_key(key)
        changes[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    return dataclasses.replace(cfg, **changes)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for fld in fields(cfg):
        v = getattr(cfg, fld.name)
        lines.append(f"{fld.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
