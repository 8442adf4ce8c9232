"""Experiment runner.

Two subcommands:

  run      execute strategy x seed runs (optionally over a sweep grid),
           writing per-round metrics CSVs, per-run ledger CSVs, and a
           summary.json per output directory
  compare  aggregate two or more run outputs into a per-strategy table
           with deltas against a named baseline

Exit codes: 0 ok, 2 invalid config or arguments, 3 infeasible
classifier budget. CSV files are byte-identical across reruns of the
same config and seed; wall-clock lives only in summary.json so the
determinism contract covers every CSV byte.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
import time
from dataclasses import fields, is_dataclass

import numpy as np
import yaml

from .config import (ConfigError, ExperimentConfig, STRATEGIES, config_hash,
                     from_dict, load, validate)
from .partition import BudgetInfeasibleError
from .sim import RunResult, run

METRIC_COLUMNS = (
    "round", "accuracy", "comm_round", "participants", "online",
    "transmitted_samples",
    "ucd_macs", "ucd_bytes", "ucd_seconds", "ucd_joules",
    "ap_macs", "ap_bytes", "ap_seconds", "ap_joules",
)
LEDGER_COLUMNS = ("round", "tier", "category", "macs", "bytes", "seconds", "joules")


def _fmt(value) -> str:
    """Canonical cell text: repr for floats (shortest round-trip, so the
    byte-identical guarantee rides on the numeric determinism), str else."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: str, columns: tuple[str, ...], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _sweep_targets(cfg: ExperimentConfig, name: str) -> list[tuple[object, str]]:
    """All (owner object, field name) pairs whose field matches a bare name."""
    hits: list[tuple[object, str]] = []

    def walk(obj):
        for f in fields(obj):
            child = getattr(obj, f.name)
            if f.name == name:
                hits.append((obj, f.name))
            if is_dataclass(child):
                walk(child)

    walk(cfg)
    return hits


def set_config_key(cfg: ExperimentConfig, key: str, value) -> None:
    """Set a config field by dotted path, or by bare name if unambiguous."""
    parts = key.split(".")
    if len(parts) == 1:
        hits = _sweep_targets(cfg, parts[0])
        if not hits:
            raise ConfigError(f"sweep key {key!r}: no such config field")
        if len(hits) > 1:
            raise ConfigError(f"sweep key {key!r}: ambiguous, use a dotted path")
        owner, name = hits[0]
        setattr(owner, name, value)
        return
    obj = cfg
    for p in parts[:-1]:
        obj = getattr(obj, p, None)
        if not is_dataclass(obj):
            raise ConfigError(f"sweep key {key!r}: no section {p!r}")
    if not any(f.name == parts[-1] for f in fields(obj)):
        raise ConfigError(f"sweep key {key!r}: no field {parts[-1]!r}")
    setattr(obj, parts[-1], value)


def parse_sweep_arg(text: str) -> tuple[str, list, list[str]]:
    """KEY=V1,V2,... -> (key, parsed values, raw value texts)."""
    if "=" not in text:
        raise ConfigError(f"--sweep {text!r}: expected KEY=V1,V2,...")
    key, _, tail = text.partition("=")
    key = key.strip()
    raw = [tok.strip() for tok in tail.split(",") if tok.strip()]
    if not key or not raw:
        raise ConfigError(f"--sweep {text!r}: expected KEY=V1,V2,...")
    values = []
    for tok in raw:
        try:
            values.append(yaml.safe_load(tok))
        except yaml.YAMLError:
            values.append(tok)
    return key, values, raw


def _totals_dict(res: RunResult) -> dict:
    out = {}
    for tier in ("ucd", "ap"):
        t = res.ledger.totals(tier=tier)
        out[tier] = {"macs": t.macs, "bytes": t.nbytes,
                     "seconds": t.seconds, "joules": t.joules}
    return out


def run_single(cfg: ExperimentConfig, strategy: str, seed: int, outdir: str) -> dict:
    """One strategy x seed run; returns its summary entry."""
    res = run(cfg, strategy, seed)
    metrics_path = os.path.join(outdir, f"{strategy}_{seed}.csv")
    ledger_path = os.path.join(outdir, f"{strategy}_{seed}_ledger.csv")
    _write_csv(metrics_path, METRIC_COLUMNS, res.rows)
    _write_csv(ledger_path, LEDGER_COLUMNS, res.ledger.to_rows())
    return {
        "strategy": strategy,
        "seed": seed,
        "final_accuracy": res.final_accuracy,
        "best_accuracy": res.best_accuracy,
        "storage_warnings": res.storage_warnings,
        "dataset_hash": res.dataset_hash,
        "totals": _totals_dict(res),
        "files": [os.path.basename(metrics_path), os.path.basename(ledger_path)],
    }


def run_experiment(cfg: ExperimentConfig, outdir: str) -> str:
    """All strategy x seed runs for one config; writes summary.json."""
    os.makedirs(outdir, exist_ok=True)
    t0 = time.perf_counter()
    entries = [
        run_single(cfg, strategy, seed, outdir)
        for strategy in cfg.run.strategies
        for seed in cfg.run.seeds
    ]
    hashes = {e["dataset_hash"] for e in entries}
    summary = {
        "config_hash": config_hash(cfg),
        "dataset_hash": hashes.pop() if len(hashes) == 1 else sorted(hashes),
        "wall_clock_s": time.perf_counter() - t0,
        "runs": entries,
        "files": sorted(f for e in entries for f in e["files"]),
    }
    path = os.path.join(outdir, "summary.json")
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _apply_flags(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    if args.strategy:
        cfg.run.strategies = [s.strip() for s in args.strategy.split(",") if s.strip()]
    if args.seeds:
        try:
            cfg.run.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--seeds {args.seeds!r}: seeds must be integers") from None
    if args.outdir:
        cfg.run.outdir = args.outdir
    if args.workers is not None:
        cfg.run.workers = args.workers
    if args.mobility:
        cfg.mobility.enabled = args.mobility == "on"
    if args.lambda_bucket:
        cfg.mobility.lambda_bucket = args.lambda_bucket


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load(args.config) if args.config else from_dict({})
    _apply_flags(cfg, args)
    sweeps = [parse_sweep_arg(s) for s in args.sweep or []]
    if not sweeps:
        validate(cfg)
        path = run_experiment(cfg, cfg.run.outdir)
        print(path)
        return 0
    keys = [key for key, _, _ in sweeps]
    grids = [list(zip(values, raw)) for _, values, raw in sweeps]
    for combo in itertools.product(*grids):
        # rebuild from the flag-adjusted base so each grid point is independent
        point = _clone_config(cfg)
        for key, (value, _) in zip(keys, combo):
            set_config_key(point, key, value)
        validate(point)
        subdir = "_".join(f"{key}={raw}" for key, (_, raw) in zip(keys, combo))
        path = run_experiment(point, os.path.join(cfg.run.outdir, subdir))
        print(path)
    return 0


def _clone_config(cfg: ExperimentConfig) -> ExperimentConfig:
    from .config import to_dict

    return from_dict(to_dict(cfg))


def _load_summary(path: str) -> dict:
    if os.path.isdir(path):
        path = os.path.join(path, "summary.json")
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no run summary at {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a valid summary ({exc})") from None


COMPARE_COLUMNS = (
    "strategy", "runs", "final_accuracy", "best_accuracy",
    "ucd_joules", "ucd_seconds", "total_bytes",
    "delta_accuracy_pp", "delta_energy_pct",
)


def compare_runs(paths: list[str], baseline: str | None) -> tuple[list[dict], str]:
    """Median per-strategy metrics with deltas against the baseline.

    Returns (table rows, baseline name). Refuses inputs whose dataset
    hashes differ; the numbers would not be about the same task.
    """
    summaries = [_load_summary(p) for p in paths]
    runs = [entry for s in summaries for entry in s["runs"]]
    if len(runs) < 2:
        raise ConfigError("compare needs at least two runs (got "
                          f"{len(runs)}); pass more run outputs")
    # data is generated per seed, so "same task" means: within any one
    # seed, every run saw the same dataset bytes
    by_seed: dict[int, set[str]] = {}
    for entry in runs:
        by_seed.setdefault(entry["seed"], set()).add(entry["dataset_hash"])
    clashes = {seed: sorted(h) for seed, h in by_seed.items() if len(h) > 1}
    if clashes:
        raise ConfigError(
            "refusing to compare runs over different datasets "
            f"(seed -> dataset hashes: {clashes})"
        )
    order: list[str] = []
    groups: dict[str, list[dict]] = {}
    for entry in runs:
        groups.setdefault(entry["strategy"], []).append(entry)
        if entry["strategy"] not in order:
            order.append(entry["strategy"])
    if baseline is None:
        baseline = "ucd_only" if "ucd_only" in groups else order[0]
    if baseline not in groups:
        raise ConfigError(f"baseline {baseline!r} not among compared strategies {order}")

    def med(entries, getter):
        return float(np.median([getter(e) for e in entries]))

    stats = {}
    for name, entries in groups.items():
        stats[name] = {
            "strategy": name,
            "runs": len(entries),
            "final_accuracy": med(entries, lambda e: e["final_accuracy"]),
            "best_accuracy": med(entries, lambda e: e["best_accuracy"]),
            "ucd_joules": med(entries, lambda e: e["totals"]["ucd"]["joules"]),
            "ucd_seconds": med(entries, lambda e: e["totals"]["ucd"]["seconds"]),
            "total_bytes": med(entries, lambda e: e["totals"]["ucd"]["bytes"]
                               + e["totals"]["ap"]["bytes"]),
        }
    base = stats[baseline]
    for name, row in stats.items():
        row["delta_accuracy_pp"] = (row["final_accuracy"] - base["final_accuracy"]) * 100.0
        row["delta_energy_pct"] = (
            (row["ucd_joules"] - base["ucd_joules"]) / base["ucd_joules"] * 100.0
            if base["ucd_joules"] else 0.0
        )
    return [stats[name] for name in order], baseline


def _print_compare_table(rows: list[dict], baseline: str) -> None:
    header = (f"{'strategy':<14}{'runs':>5}{'final':>8}{'best':>8}"
              f"{'ucd J':>12}{'ucd s':>12}{'GB moved':>10}{'d_acc pp':>10}{'d_E %':>8}")
    print(header)
    print("-" * len(header))
    for row in rows:
        mark = "*" if row["strategy"] == baseline else " "
        print(f"{row['strategy']:<13}{mark}{row['runs']:>5}"
              f"{row['final_accuracy']:>8.3f}{row['best_accuracy']:>8.3f}"
              f"{row['ucd_joules']:>12.4g}{row['ucd_seconds']:>12.4g}"
              f"{row['total_bytes'] / 1e9:>10.3f}"
              f"{row['delta_accuracy_pp']:>+10.1f}{row['delta_energy_pct']:>+8.1f}")
    print(f"* baseline = {baseline}")


def cmd_compare(args: argparse.Namespace) -> int:
    rows, baseline = compare_runs(args.paths, args.baseline)
    _print_compare_table(rows, baseline)
    out = args.out
    if out is None:
        first = args.paths[0]
        base_dir = first if os.path.isdir(first) else os.path.dirname(first) or "."
        out = os.path.join(base_dir, "comparison.csv")
    _write_csv(out, COMPARE_COLUMNS, rows)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedtier",
        description="Deterministic multitier federated-learning simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute strategy x seed runs")
    p_run.add_argument("--config", help="YAML experiment config (defaults used if omitted)")
    p_run.add_argument("--strategy", help=f"comma list from {','.join(STRATEGIES)}")
    p_run.add_argument("--seeds", help="comma list of integer seeds")
    p_run.add_argument("--sweep", action="append", metavar="KEY=V1,V2,...",
                       help="grid axis over a config field; repeatable")
    p_run.add_argument("--outdir", help="output directory (default from config)")
    p_run.add_argument("--mobility", choices=("on", "off"),
                       help="override mobility.enabled")
    p_run.add_argument("--lambda-bucket", choices=("low", "mid", "high"),
                       help="override mobility.lambda_bucket")
    p_run.add_argument("--workers", type=int,
                       help="threads for parallel client execution")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate two or more run outputs")
    p_cmp.add_argument("paths", nargs="+",
                       help="summary.json files or run directories")
    p_cmp.add_argument("--baseline",
                       help="strategy the deltas are measured against "
                            "(default ucd_only when present)")
    p_cmp.add_argument("--out", help="comparison CSV path "
                                     "(default comparison.csv beside the first input)")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BudgetInfeasibleError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
