import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from qualtrack import fileio
from qualtrack.cli import cli_main

FIXTURES = Path(__file__).parent / "fixtures"
SMALL = ["--n-objects", "6", "--n-frames", "30", "--fp-rate", "1", "--degraded-fraction", "0.3"]


def simulate(out, *extra):
    code = cli_main(["simulate", "--out-dir", str(out), "--seed", "7", *SMALL, *extra])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    return simulate(tmp_path_factory.mktemp("scn"), "--features")


def test_simulate_is_byte_deterministic(tmp_path):
    a, b = simulate(tmp_path / "a"), simulate(tmp_path / "b")
    for name in fileio.SCENARIO_FILES:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = tmp_path / "c"
    assert cli_main(["simulate", "--out-dir", str(c), "--seed", "8", *SMALL]) == 0
    assert (a / "detections.jsonl").read_bytes() != (c / "detections.jsonl").read_bytes()


def test_open_gates_qoa_equals_cv(scenario, tmp_path):
    det = str(scenario / "detections.jsonl")
    assert cli_main(["track", "--detections", det, "--out-dir", str(tmp_path / "q"),
                     "--mode", "qoa", "--mu-v", "0", "--mu-l", "0"]) == 0
    assert cli_main(["track", "--detections", det, "--out-dir", str(tmp_path / "c"), "--mode", "cv"]) == 0
    assert (tmp_path / "q" / "tracks.jsonl").read_bytes() == (tmp_path / "c" / "tracks.jsonl").read_bytes()


def test_floats_have_nine_significant_digits(scenario):
    for line in (scenario / "detections.jsonl").read_text().splitlines():
        for key, value in json.loads(line).items():
            if isinstance(value, float) and value != 0.0:
                assert float(f"{value:.9g}") == value, key


def test_unknown_flag_is_usage_error(capsys, tmp_path):
    assert cli_main(["simulate", "--out-dir", str(tmp_path), "--bogus"]) == 2
    assert "usage:" in capsys.readouterr().err
    assert cli_main([]) == 2
    assert cli_main(["frobnicate"]) == 2
    assert cli_main(["track", "--mu-v", "abc", "--detections", "x"]) == 2


def test_invalid_input_exits_1(tmp_path, capsys):
    bad = tmp_path / "d.jsonl"
    bad.write_text("{broken\n")
    assert cli_main(["track", "--detections", str(bad), "--out-dir", str(tmp_path)]) == 1
    assert "d.jsonl:1" in capsys.readouterr().err
    assert cli_main(["track", "--detections", str(tmp_path / "missing.jsonl"),
                     "--out-dir", str(tmp_path)]) == 1
    assert cli_main(["simulate", "--out-dir", str(tmp_path), "--miss-rate", "2"]) == 1
    cfg = tmp_path / "c.yaml"
    cfg.write_text("tracker:\n  nonsense: 1\n")
    assert cli_main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 1
    assert not (tmp_path / "manifest.json").exists()


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 3\nscenario:\n  n_objects: 4\n  n_frames: 5\n")
    assert cli_main(["simulate", "--config", str(cfg), "--n-frames", "7", "--out-dir", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["config"]["seed"] == 3
    assert m["config"]["scenario"]["n_objects"] == 4
    assert m["config"]["scenario"]["n_frames"] == 7
    assert len(fileio.parse_ground_truth(tmp_path / "gt.jsonl")) == 7


def test_manifest_reproduces_run(tmp_path):
    first = simulate(tmp_path / "a")
    again = tmp_path / "b"
    assert cli_main(["simulate", "--config", str(first / "manifest.json"), "--out-dir", str(again)]) == 0
    for name in fileio.SCENARIO_FILES:
        assert (first / name).read_bytes() == (again / name).read_bytes()
    m = json.loads((first / "manifest.json").read_text())
    assert m["command"] == "simulate" and m["outputs"] == sorted(fileio.SCENARIO_FILES)


def test_full_pipeline(scenario, tmp_path):
    assert cli_main(["track", "--detections", str(scenario / "detections.jsonl"),
                     "--out-dir", str(tmp_path), "--fuse", "--alpha", "0.5"]) == 0
    assert cli_main(["evaluate", "--gt", str(scenario / "gt.jsonl"),
                     "--tracks", str(tmp_path / "tracks.jsonl"), "--out-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert 0.0 <= report["amota"] <= 1.0 and report["mota"] <= 1.0
    with open(tmp_path / "recall.csv") as f:
        assert len(list(csv.DictReader(f))) <= 40


def test_evaluate_golden_fixture(tmp_path):
    gold = FIXTURES / "metrics_golden"
    assert cli_main(["evaluate", "--gt", str(gold / "gt.jsonl"), "--tracks", str(gold / "tracks.jsonl"),
                     "--out-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["mota"] == 0.85 and report["ids"] == 1


def test_analyze(scenario, tmp_path):
    assert cli_main(["analyze", "--provenance", str(scenario / "provenance.jsonl"),
                     "--out-dir", str(tmp_path), "--bins", "10"]) == 0
    a = json.loads((tmp_path / "analysis.json").read_text())
    assert -1 <= a["pearson_r"] <= 1
    with open(tmp_path / "histograms.csv") as f:
        assert len(list(csv.DictReader(f))) == 20


def test_fit_quality_then_learned_simulation(scenario, tmp_path):
    assert cli_main(["fit-quality", "--table", str(scenario / "loc_features.csv"),
                     "--epochs", "200", "--out-dir", str(tmp_path / "fit")]) == 0
    with open(tmp_path / "fit" / "loss.csv") as f:
        losses = [float(r["loss"]) for r in csv.DictReader(f)]
    assert len(losses) == 201 and losses[-1] < losses[0]  # initial loss plus one per epoch
    est = tmp_path / "fit" / "params.json"
    assert cli_main(["simulate", "--out-dir", str(tmp_path / "learned"), "--seed", "1", *SMALL,
                     "--quality", "learned", "--estimator", str(est)]) == 0
    assert cli_main(["simulate", "--out-dir", str(tmp_path / "x"), "--quality", "learned"]) == 1


def test_fit_quality_rejects_bad_targets(tmp_path):
    t = tmp_path / "t.csv"
    t.write_text("a,target\n1,2\n")
    assert cli_main(["fit-quality", "--table", str(t), "--out-dir", str(tmp_path)]) == 1


def test_sweep_and_detection_eval(scenario, tmp_path):
    assert cli_main(["sweep-alpha", "--scenario", str(scenario), "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "sweep.csv") as f:
        rows = list(csv.DictReader(f))
    assert [float(r["alpha"]) for r in rows] == pytest.approx([k / 10 for k in range(11)])
    assert cli_main(["evaluate-detection", "--scenario", str(scenario), "--fuse",
                     "--alpha", "0.2", "--out-dir", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "detection.json").read_text())
    assert d["n_input"] > 0


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qualtrack.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "simulate" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "qualtrack.cli", "track"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage:" in proc.stderr
