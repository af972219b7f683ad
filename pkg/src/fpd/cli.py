"""Command line entry point.

    fpd run --config exp.cfg [--sweep f=2,6,9] [--sweep attack=lie,ipm] [--out DIR]
    fpd summarize --in DIR

``run`` expands the sweeps into a grid, runs every cell ``repetitions``
times with seeds ``seed, seed+1, ...`` and writes one round log per run plus
``summary.csv`` and ``summary.txt``. Exit code 2 means a configuration
error.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ExperimentConfig, apply_overrides, canonical_key, load_config
from .errors import ConfigError, FPDError
from .harness import load_runs, run_experiment, summarize, summary_csv, summary_table

log = logging.getLogger("fpd")


def parse_sweep(items) -> dict:
    """``["f=2,6", "attack=lie"]`` -> ``{"f": ["2", "6"], "attack": ["lie"]}``."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(item, "sweep entries look like key=v1,v2,...")
        key, values = item.split("=", 1)
        key = canonical_key(key)
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(key, "sweep has no values")
        out[key] = vals
    return out


def expand(base: ExperimentConfig, sweep: dict) -> list[tuple[str, ExperimentConfig]]:
    """Every (run name, config) pair of the sweep grid times the repetitions."""
    keys = sorted(sweep)
    runs = []
    for combo in itertools.product(*(sweep[k] for k in keys)):
        cell = apply_overrides(base, dict(zip(keys, combo)))
        cell.validate()
        tag = "_".join(f"{k}-{v}" for k, v in zip(keys, combo)) or "run"
        for r in range(cell.repetitions):
            seed = cell.seed + r
            runs.append((f"{tag}_seed-{seed}", cell.replace(seed=seed)))
    return runs


def _run_one(job):
    path, cfg = job
    run_experiment(cfg, csv_path=path)
    return str(path)


def cmd_run(args) -> int:
    base = load_config(args.config)
    runs = expand(base, parse_sweep(args.sweep))
    out = Path(args.out or base.output or "runs")
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(out / f"{name}.csv", cfg.replace(output="")) for name, cfg in runs]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            for p in pool.map(_run_one, jobs):
                log.info("wrote %s", p)
    else:
        for job in jobs:
            log.info("wrote %s", _run_one(job))
    return _write_summary(out)


def _write_summary(directory: Path) -> int:
    rows = summarize(load_runs(directory))
    (directory / "summary.csv").write_text(summary_csv(rows))
    table = summary_table(rows)
    (directory / "summary.txt").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_summarize(args) -> int:
    directory = Path(args.indir)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    return _write_summary(directory)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpd", description="Federated learning poisoning-defense experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment grid")
    r.add_argument("--config", required=True, help="key = value config file")
    r.add_argument("--sweep", action="append", metavar="KEY=V1,V2", help="sweep a key (repeatable)")
    r.add_argument("--out", help="output directory (default: config 'output' or ./runs)")
    r.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("summarize", help="summarize the round logs in a directory")
    s.add_argument("--in", dest="indir", required=True)
    s.set_defaults(func=cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FPDError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
