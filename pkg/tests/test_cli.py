import csv
import json

import pytest

from mflpaths.cli import main

SMALL = {"lambda": 0.05, "sigma": 0.5, "tau": 0.25, "m": 16, "iterations": 20, "report_stride": 5,
         "checkpoint_every": 10}


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--benchmark", "bifurcation", "--N", "64", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run1(sim, tmp_path_factory):
    base = tmp_path_factory.mktemp("run")
    cfg = base / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    out = base / "run1"
    assert main(["infer", "--config", str(cfg), "--data", str(sim / "snapshots.csv"), "--out", str(out),
                 "--threads", "1"]) == 0
    return out


def times_in(path):
    with open(path) as fh:
        return sorted({row["t"] for row in csv.DictReader(fh)}, key=float)


def test_simulate_bifurcation(sim):
    assert len(times_in(sim / "snapshots.csv")) == 10
    assert len(times_in(sim / "truth.csv")) == 10
    assert json.loads((sim / "manifest.json").read_text())["seed"] == 7


def test_simulate_bistable(tmp_path):
    assert main(["simulate", "--benchmark", "bistable", "--growth", "on", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "snapshots.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 500 and len({r["t"] for r in rows}) == 10


def test_missing_benchmark_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_config_exit_code(sim, tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"lambda": 0.05, "sigma": 0.5, "tau": -1}))
    assert main(["infer", "--config", str(cfg), "--data", str(sim / "snapshots.csv"), "--out",
                 str(tmp_path / "o")]) == 2


def test_runtime_error_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["infer", "--config", str(cfg), "--data", str(tmp_path / "missing.csv"), "--out",
                 str(tmp_path / "o")]) == 3


def test_infer_outputs(run1):
    manifest = json.loads((run1 / "manifest.json").read_text())
    assert manifest["command"] == "infer" and len(manifest["config_hash"]) == 64
    assert manifest["seed"] == 0 and "numpy" in manifest["versions"]
    lines = (run1 / "diagnostics.jsonl").read_text().splitlines()
    assert len(lines) == 5 and json.loads(lines[-1])["iteration"] == 20


def test_rerun_and_manifest_are_byte_identical(run1, tmp_path):
    out = tmp_path / "again"
    assert main(["infer", "--from-manifest", str(run1), "--out", str(out), "--threads", "4"]) == 0
    assert (out / "marginals.csv").read_bytes() == (run1 / "marginals.csv").read_bytes()


def test_resume_matches(run1, sim, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    out = tmp_path / "resumed"
    assert main(["infer", "--config", str(cfg), "--data", str(sim / "snapshots.csv"), "--out", str(out),
                 "--resume", str(run1 / "checkpoints" / "ckpt_10")]) == 0
    assert (out / "marginals.csv").read_bytes() == (run1 / "marginals.csv").read_bytes()


def test_sample_paths_size(run1, tmp_path):
    out = tmp_path / "paths"
    assert main(["sample-paths", "--run", str(run1), "--count", "100", "--grid", "5", "--out", str(out)]) == 0
    with open(out / "paths.csv") as fh:
        rows = list(csv.DictReader(fh))
    # 9 intervals with 5 points each, shared knots kept once
    assert len(rows) == 100 * (9 * 4 + 1)
    assert list(rows[0])[:3] == ["path_id", "t", "x1"]
    assert (out / "skeleton.csv").exists()


def test_evaluate(run1, sim, tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["evaluate", "--run", str(run1), "--truth", str(sim / "truth.csv"), "--compare",
                 str(sim / "snapshots.csv"), "--out", str(out)]) == 0
    rep = json.loads((out / "eval.json").read_text())
    assert len(rep["energy_distance_sq"]) == 10 and rep["rms_energy_distance"] > 0
    assert "snapshots" in rep["comparisons"]
    # the inference manifest in the run directory is left alone
    assert json.loads((run1 / "manifest.json").read_text())["command"] == "infer"


def test_full_run(tmp_path):
    assert main(["full-run", "--benchmark", "bifurcation", "--N", "16", "--iterations", "3", "--count", "20",
                 "--grid", "3", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "run" / "eval.json").exists() and (tmp_path / "run" / "paths.csv").exists()
