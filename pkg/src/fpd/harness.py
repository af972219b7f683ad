"""Seeded experiment runner, per-round CSV log and summary tables."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean
from typing import Iterable, Optional, Sequence

import numpy as np

from . import attacks, baselines, data
from .config import ExperimentConfig, format_config, parse_config_text
from .defense import FPDDefense, StageVerdicts
from .model import Model, apply_global, evaluate, local_train

log = logging.getLogger(__name__)

CSV_HEADER = ["round", "defense", "attack", "selected", "removed_colluding", "removed_spectral",
              "denoised", "accuracy", "precision", "recall", "seed"]


@dataclass
class RoundOutcome:
    t: int
    selected: set
    removed_colluding: set = field(default_factory=set)
    removed_spectral: set = field(default_factory=set)
    denoised: set = field(default_factory=set)
    accuracy: float = 0.0
    precision: Optional[float] = None
    recall: Optional[float] = None

    @property
    def survivors(self) -> set:
        return self.selected - self.removed_colluding - self.removed_spectral


def detection_metrics(verdicts, compromised) -> tuple[Optional[float], Optional[float]]:
    """Precision and recall of Stages II+III against the true attackers.

    Precision is 1.0 for a round that removed nobody and had no attacker
    selected; it is None when nothing was removed but attackers were
    present. Recall is None when no attacker was selected.
    """
    compromised = set(compromised)
    removed = set(verdicts.removed_colluding) | set(verdicts.removed_spectral)
    bad_selected = compromised & set(verdicts.selected)
    hit = len(removed & compromised)
    if removed:
        precision = hit / len(removed)
    else:
        precision = 1.0 if not bad_selected else None
    recall = hit / len(bad_selected) if bad_selected else None
    return precision, recall


def compromised_ids(cfg: ExperimentConfig) -> frozenset:
    if cfg.f == 0 or cfg.attack == "none":
        return frozenset()
    rng = np.random.default_rng(cfg.stream_seed("attack"))
    return frozenset(int(k) for k in rng.choice(cfg.K, size=cfg.f, replace=False))


def build_data(cfg: ExperimentConfig):
    """(client datasets, test set) for the configured task."""
    seed = cfg.stream_seed("data")
    if cfg.dataset == "synthetic":
        train = data.generate_synthetic(cfg.n_train, cfg.n_labels, cfg.dim, seed)
        test = data.generate_synthetic(cfg.n_test, cfg.n_labels, cfg.dim, seed + 1)
    else:
        train = data.load_idx(cfg.idx_train_images, cfg.idx_train_labels)
        test = data.load_idx(cfg.idx_test_images, cfg.idx_test_labels)
        L = max(train.n_labels, test.n_labels)
        train.n_labels = test.n_labels = L
    sizes = data.sample_sizes(cfg.K, cfg.size_low, cfg.size_high, seed + 2)
    parts = data.partition_noniid(train, data.PartitionSpec(cfg.K, cfg.q, sizes, seed + 3))
    return parts, test


def _aggregate_baseline(cfg: ExperimentConfig, local_updates: dict) -> np.ndarray:
    ids = sorted(local_updates)
    vecs = [local_updates[k].delta for k in ids]
    if cfg.defense == "fedavg":
        return baselines.fedavg([local_updates[k] for k in ids])
    if cfg.defense == "krum":
        return baselines.krum(vecs, cfg.f)
    if cfg.defense == "faba":
        return baselines.faba(vecs, cfg.f)
    return baselines.coordinate_median(vecs)


def run_experiment(cfg: ExperimentConfig, csv_path=None) -> list[RoundOutcome]:
    """Run ``cfg.T`` seeded federated rounds.

    Each round: select clients, train every selected client locally
    (label-flipping attackers on flipped data), let the adversary rewrite
    its clients' updates, aggregate with the configured defense, apply the
    aggregate and evaluate on the test set. Writes the per-round CSV to
    ``csv_path`` (or ``cfg.output`` when set).
    """
    cfg.validate()
    parts, test = build_data(cfg)
    L = max(test.n_labels, parts[0].n_labels)
    spec = attacks.AttackSpec(cfg.attack, compromised_ids(cfg), cfg.z_max, cfg.epsilon)
    train_sets = [attacks.label_flip(p, L) if spec.flips_labels(k) else p for k, p in enumerate(parts)]

    train_seed = cfg.stream_seed("training")
    model = Model.create(test.dim, cfg.hidden, L, seed=train_seed)
    defense = None
    if cfg.defense == "fpd":
        defense = FPDDefense(range(cfg.K), model.arch.last_layer_slice, cfg.fpd_config(),
                             seed=cfg.stream_seed("selection"))

    outcomes = []
    for t in range(1, cfg.T + 1):
        selected = defense.select(t) if defense else set(range(cfg.K))
        local = {}
        for k in sorted(selected):
            s = int(np.random.SeedSequence([train_seed, t, k]).generate_state(1)[0])
            local[k] = local_train(model, train_sets[k], cfg.E, cfg.lr, cfg.batch, seed=s, client_id=k)
        crafted = attacks.craft_updates(spec, {k: u.delta for k, u in local.items()}, cfg.K)
        for k, delta in crafted.items():
            local[k].delta = delta

        if defense:
            agg, verdicts = defense.aggregate(t, crafted)
            precision, recall = detection_metrics(verdicts, spec.compromised_ids)
        else:
            agg = _aggregate_baseline(cfg, local)
            verdicts = StageVerdicts(selected=set(selected))
            precision = recall = None
        model = apply_global(model, agg)
        acc = evaluate(model, test)
        outcomes.append(RoundOutcome(t, set(selected), set(verdicts.removed_colluding),
                                     set(verdicts.removed_spectral), set(verdicts.denoised),
                                     acc, precision, recall))
        log.debug("round %d acc=%.4f removed=%s", t, acc, sorted(verdicts.removed))

    path = csv_path or (cfg.output or None)
    if path:
        write_csv(outcomes, cfg, path)
    return outcomes


def _ids(s: Iterable) -> str:
    return " ".join(str(k) for k in sorted(s))


def _num(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def outcomes_to_csv(outcomes: Sequence[RoundOutcome], cfg: ExperimentConfig) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for o in outcomes:
        w.writerow([o.t, cfg.defense, cfg.attack, _ids(o.selected), _ids(o.removed_colluding),
                    _ids(o.removed_spectral), _ids(o.denoised), _num(o.accuracy),
                    _num(o.precision), _num(o.recall), cfg.seed])
    return buf.getvalue()


def write_csv(outcomes: Sequence[RoundOutcome], cfg: ExperimentConfig, path) -> Path:
    """Write the round log and, next to it, the full config as ``<stem>.cfg``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(outcomes_to_csv(outcomes, cfg))
    path.with_suffix(".cfg").write_text(format_config(cfg))
    return path


def read_csv(path) -> list[RoundOutcome]:
    def ids(s):
        return {int(x) for x in s.split()}

    def num(s):
        return float(s) if s else None

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [RoundOutcome(int(r["round"]), ids(r["selected"]), ids(r["removed_colluding"]),
                         ids(r["removed_spectral"]), ids(r["denoised"]), float(r["accuracy"]),
                         num(r["precision"]), num(r["recall"])) for r in rows]


@dataclass
class SummaryRow:
    defense: str
    attack: str
    f_fraction: float
    q: float
    repetitions: int
    mean_accuracy: float


def summarize(runs: Sequence[tuple[ExperimentConfig, Sequence[RoundOutcome]]]) -> list[SummaryRow]:
    """Mean final accuracy per (defense, attack, attacker fraction, q) cell."""
    cells: dict = {}
    for cfg, outcomes in runs:
        if not outcomes:
            continue
        key = (cfg.defense, cfg.attack, round(cfg.f / cfg.K, 6), cfg.q)
        cells.setdefault(key, []).append(outcomes[-1].accuracy)
    return [SummaryRow(d, a, ff, q, len(accs), mean(accs))
            for (d, a, ff, q), accs in sorted(cells.items())]


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["defense", "attack", "f_fraction", "q", "repetitions", "mean_accuracy"])
    for r in rows:
        w.writerow([r.defense, r.attack, r.f_fraction, r.q, r.repetitions, repr(r.mean_accuracy)])
    return buf.getvalue()


def summary_table(rows: Sequence[SummaryRow]) -> str:
    head = ["defense", "attack", "attackers", "q", "reps", "accuracy (%)"]
    body = [[r.defense, r.attack, f"{100 * r.f_fraction:.0f}%", f"{r.q:g}", str(r.repetitions),
             f"{100 * r.mean_accuracy:.2f}"] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    fmt = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(head), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]
    return "\n".join(lines) + "\n"


def load_runs(directory) -> list[tuple[ExperimentConfig, list[RoundOutcome]]]:
    """Read every ``*.csv`` round log with a sibling ``.cfg`` under ``directory``."""
    runs = []
    for path in sorted(Path(directory).glob("*.csv")):
        cfg_path = path.with_suffix(".cfg")
        if not cfg_path.exists():
            continue
        runs.append((parse_config_text(cfg_path.read_text()), read_csv(path)))
    return runs
