import csv
import json
import re
import subprocess
import sys
from importlib import resources

import pytest

from islandsched.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main

TINY = {"n_pcc_draws": "3", "epochs": "60", "horizon_s": "3.0", "encode_trials": "3",
        "sweep_limits_hz": "[1.0, 3.0]"}


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    text = resources.files("islandsched").joinpath("data/case_study.toml").read_text()
    for key, val in TINY.items():
        text, n = re.subn(rf"(?m)^{key} = .*$", f"{key} = {val}", text)
        assert n == 1, key
    path = tmp_path_factory.mktemp("cfg") / "tiny.toml"
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def trained(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    common = ["--config", str(tiny_config), "--out-dir", str(out)]
    assert main(["dataset", *common]) == EXIT_OK
    assert main(["train", *common]) == EXIT_OK
    return out, common


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["schedule", "--case", "7"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == EXIT_USAGE


def test_missing_weights(tmp_path, capsys):
    code = main(["schedule", "--case", "3", "--out-dir", str(tmp_path)])
    assert code == EXIT_DATA
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == EXIT_DATA
    assert "surrogate required for case 3" in err["message"]


def test_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[system]\nseed = 1\n")
    assert main(["schedule", "--config", str(bad), "--out-dir", str(tmp_path)]) == EXIT_DATA


def test_simulate_flat_without_import(tiny_config, tmp_path):
    assert main(["simulate", "--config", str(tiny_config), "--out-dir", str(tmp_path),
                 "--p-pcc", "0"]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "trajectory.csv")))
    assert {r["freq_hz"] for r in rows} == {"60.000000"}
    meta = json.load(open(tmp_path / "trajectory.csv.meta.json"))
    assert meta["seed"] == 7 and len(meta["config_hash"]) == 64


def test_simulate_rejects_bad_commitment(tiny_config, tmp_path):
    assert main(["simulate", "--config", str(tiny_config), "--out-dir", str(tmp_path),
                 "--u-d", "1"]) == EXIT_USAGE


def test_dataset_and_weights_are_deterministic(trained, tmp_path):
    out, _ = trained
    again = ["--config", trained[1][1], "--out-dir", str(tmp_path)]
    assert main(["dataset", *again]) == EXIT_OK
    assert main(["train", *again]) == EXIT_OK
    for name in ("dataset.csv", "weights.json"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name
    assert not list(tmp_path.glob("*.partial"))


def test_seed_override_changes_hash(trained, tmp_path):
    out, common = trained
    assert main(["dataset", "--config", common[1], "--out-dir", str(tmp_path), "--seed", "8"]) == EXIT_OK
    a = json.load(open(out / "dataset.csv.meta.json"))
    b = json.load(open(tmp_path / "dataset.csv.meta.json"))
    assert a["seed"] == 7 and b["seed"] == 8 and a["config_hash"] != b["config_hash"]


def test_schedule_cases(trained):
    out, common = trained
    costs = {}
    for case in (1, 2, 3):
        assert main(["schedule", "--case", str(case), *common]) == EXIT_OK
        d = json.load(open(out / f"costs_case{case}.json"))
        costs[case] = d["total"]
        assert (out / f"schedule_case{case}.csv").exists()
    assert costs[1] <= costs[2] + 1e-6 <= costs[3] + 2e-6


def test_encode_check(trained):
    out, common = trained
    code = main(["encode-check", *common])
    d = json.load(open(out / "encode_check.json"))
    assert code == (EXIT_OK if d["passed"] else 4)
    assert d["max_deviation"] <= 1e-6


def test_verify_and_replay(trained):
    out, common = trained
    assert main(["verify", "--case", "2", "--period", "8", "--ufls", *common]) == EXIT_OK
    files = sorted(p.name for p in out.glob("verify_*"))
    assert any(f.endswith(".csv") for f in files) and any(f.endswith(".json") for f in files)
    assert main(["replay", "--period", "8", *common]) in (EXIT_OK, 4)
    summary = json.load(open(next(out.glob("replay_*.json"))))
    assert "modes" in summary


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "islandsched.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "reproduce" in r.stdout
