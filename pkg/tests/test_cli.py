"""CLI tests: exit codes, file naming, sweep grids, byte-identical
reruns, and the compare table. The re-summation oracle reads the emitted
CSVs back and checks them against summary.json."""
import csv
import json
import os
import subprocess
import sys

import pytest

from fedtier.cli import main, parse_sweep_arg, set_config_key
from fedtier.config import ConfigError, ExperimentConfig


def fast_args(outdir, *extra):
    return ["run", "--strategy", "ucd_only", "--seeds", "0",
            "--sweep", "rounds=4", "--sweep", "num_clients=4",
            "--sweep", "per_class=40", "--sweep", "epochs=1",
            "--outdir", str(outdir), *extra]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def subdir(outdir):
    return os.path.join(str(outdir), "rounds=4_num_clients=4_per_class=40_epochs=1")


# --------------------------------------------------------------- plumbing

def test_sweep_arg_parsing():
    key, values, raw = parse_sweep_arg("alpha=1,3.5,banana")
    assert key == "alpha"
    assert values == [1, 3.5, "banana"]
    assert raw == ["1", "3.5", "banana"]
    with pytest.raises(ConfigError):
        parse_sweep_arg("alpha")
    with pytest.raises(ConfigError):
        parse_sweep_arg("=3")


def test_set_config_key_bare_dotted_and_bogus():
    cfg = ExperimentConfig()
    set_config_key(cfg, "alpha", 2.0)  # unique bare name
    assert cfg.selection.alpha == 2.0
    set_config_key(cfg, "devices.ucd.cpu_freq_hz", 5e7)
    assert cfg.devices.ucd.cpu_freq_hz == 5e7
    with pytest.raises(ConfigError, match="ambiguous"):
        set_config_key(cfg, "disconnect_prob", 0.1)  # ucd and ap both have it
    with pytest.raises(ConfigError, match="no such config field"):
        set_config_key(cfg, "warp_factor", 9)
    with pytest.raises(ConfigError, match="no section"):
        set_config_key(cfg, "warpcore.alpha", 9)


# ------------------------------------------------------------------- run

def test_run_writes_named_files_and_summary(tmp_path):
    assert main(fast_args(tmp_path)) == 0
    d = subdir(tmp_path)
    assert os.path.exists(os.path.join(d, "ucd_only_0.csv"))
    assert os.path.exists(os.path.join(d, "ucd_only_0_ledger.csv"))
    with open(os.path.join(d, "summary.json")) as fh:
        summary = json.load(fh)
    for name in summary["files"]:
        p = os.path.join(d, name)
        assert os.path.exists(p) and os.path.getsize(p) > 0
    assert summary["config_hash"]
    assert summary["wall_clock_s"] > 0
    run = summary["runs"][0]
    assert run["strategy"] == "ucd_only" and run["seed"] == 0
    assert 0.0 <= run["final_accuracy"] <= 1.0


def test_strategy_by_seed_cartesian_product(tmp_path):
    args = ["run", "--strategy", "partitioned,ucd_only,ap_only",
            "--seeds", "1,2,3", "--sweep", "rounds=2", "--sweep", "num_clients=3",
            "--sweep", "per_class=30", "--sweep", "epochs=1",
            "--sweep", "participation_fraction=1.0",
            "--outdir", str(tmp_path)]
    assert main(args) == 0
    d = os.path.join(
        str(tmp_path),
        "rounds=2_num_clients=3_per_class=30_epochs=1_participation_fraction=1.0",
    )
    csvs = [f for f in os.listdir(d) if f.endswith(".csv") and "ledger" not in f]
    assert len(csvs) == 9
    with open(os.path.join(d, "summary.json")) as fh:
        assert len(json.load(fh)["runs"]) == 9


def test_sweep_grid_directories(tmp_path):
    args = ["run", "--strategy", "ucd_only", "--seeds", "0",
            "--sweep", "alpha=1,3", "--sweep", "beta=1,5",
            "--sweep", "rounds=2", "--sweep", "num_clients=3",
            "--sweep", "per_class=30", "--sweep", "epochs=1",
            "--outdir", str(tmp_path)]
    assert main(args) == 0
    dirs = sorted(os.listdir(tmp_path))
    assert len(dirs) == 4
    assert all(d.startswith("alpha=") and "beta=" in d for d in dirs)
    for d in dirs:
        assert os.path.exists(os.path.join(tmp_path, d, "summary.json"))


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(fast_args(a)) == 0
    assert main(fast_args(b)) == 0
    for name in ("ucd_only_0.csv", "ucd_only_0_ledger.csv"):
        pa = os.path.join(subdir(a), name)
        pb = os.path.join(subdir(b), name)
        assert open(pa, "rb").read() == open(pb, "rb").read()


def test_summary_totals_resurvive_csv_resummation(tmp_path):
    assert main(fast_args(tmp_path)) == 0
    d = subdir(tmp_path)
    with open(os.path.join(d, "summary.json")) as fh:
        run = json.load(fh)["runs"][0]
    rows = read_csv(os.path.join(d, "ucd_only_0_ledger.csv"))
    for tier in ("ucd", "ap"):
        for col, key in (("macs", "macs"), ("bytes", "bytes"),
                         ("seconds", "seconds"), ("joules", "joules")):
            resum = sum(float(r[col]) for r in rows if r["tier"] == tier)
            assert resum == pytest.approx(run["totals"][tier][key], rel=1e-12, abs=1e-300)
    metric = read_csv(os.path.join(d, "ucd_only_0.csv"))
    assert sum(int(r["ucd_macs"]) for r in metric) == run["totals"]["ucd"]["macs"]


def test_metrics_csv_has_the_documented_columns(tmp_path):
    assert main(fast_args(tmp_path)) == 0
    rows = read_csv(os.path.join(subdir(tmp_path), "ucd_only_0.csv"))
    assert list(rows[0]) == [
        "round", "accuracy", "comm_round", "participants", "online",
        "transmitted_samples",
        "ucd_macs", "ucd_bytes", "ucd_seconds", "ucd_joules",
        "ap_macs", "ap_bytes", "ap_seconds", "ap_joules",
    ]
    assert [int(r["round"]) for r in rows] == list(range(len(rows)))


# ----------------------------------------------------------- exit codes

def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "fedtier.cli", *args],
                          capture_output=True, text=True)


def test_exit_2_on_bad_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("federation:\n  lr: -3\n")
    proc = run_cli("run", "--config", str(bad), "--outdir", str(tmp_path / "o"))
    assert proc.returncode == 2
    assert "federation.lr" in proc.stderr


def test_exit_2_on_unknown_key(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("federacion: {}\n")
    proc = run_cli("run", "--config", str(bad), "--outdir", str(tmp_path / "o"))
    assert proc.returncode == 2
    assert "unknown keys" in proc.stderr


def test_exit_3_on_infeasible_budget(tmp_path):
    proc = run_cli("run", "--strategy", "ucd_only", "--seeds", "0",
                   "--sweep", "memory_budget_bytes=8", "--sweep", "rounds=2",
                   "--sweep", "num_clients=3", "--sweep", "per_class=30",
                   "--outdir", str(tmp_path))
    assert proc.returncode == 3
    assert "budget" in proc.stderr


def test_exit_2_on_bad_seeds_flag(tmp_path):
    proc = run_cli("run", "--seeds", "one,two", "--outdir", str(tmp_path))
    assert proc.returncode == 2


# -------------------------------------------------------------- compare

def compare_setup(tmp_path):
    args = ["run", "--strategy", "partitioned,ucd_only", "--seeds", "0,1",
            "--sweep", "rounds=4", "--sweep", "num_clients=4",
            "--sweep", "per_class=40", "--sweep", "epochs=1",
            "--outdir", str(tmp_path)]
    assert main(args) == 0
    return subdir(tmp_path)


def test_compare_table_and_csv(tmp_path, capsys):
    d = compare_setup(tmp_path)
    assert main(["compare", d]) == 0
    out = capsys.readouterr().out
    assert "partitioned" in out and "ucd_only" in out
    assert "baseline = ucd_only" in out
    rows = read_csv(os.path.join(d, "comparison.csv"))
    by_strategy = {r["strategy"]: r for r in rows}
    assert float(by_strategy["ucd_only"]["delta_accuracy_pp"]) == 0.0
    assert float(by_strategy["ucd_only"]["delta_energy_pct"]) == 0.0
    assert by_strategy["partitioned"]["runs"] == "2"


def test_compare_refuses_single_run(tmp_path, capsys):
    assert main(fast_args(tmp_path)) == 0
    assert main(["compare", subdir(tmp_path)]) == 2


def test_compare_refuses_mismatched_datasets(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(fast_args(a)) == 0
    assert main(fast_args(b, "--sweep", "per_class=44")) == 0
    d_b = os.path.join(
        str(b), "rounds=4_num_clients=4_per_class=40_epochs=1_per_class=44"
    )
    rc = main(["compare", subdir(a), d_b])
    assert rc == 2


def test_compare_rejects_unknown_baseline(tmp_path):
    d = compare_setup(tmp_path)
    assert main(["compare", d, "--baseline", "ap_only"]) == 2


def test_compare_missing_summary(tmp_path):
    assert main(["compare", str(tmp_path), str(tmp_path)]) == 2
