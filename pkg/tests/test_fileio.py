import json
import logging
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qualtrack import fileio
from qualtrack.fileio import FormatError, RunConfig
from qualtrack.simulator import ScenarioConfig, generate
from qualtrack.tracker import TrackerConfig, track_sequence

FIXTURES = Path(__file__).parent / "fixtures"


def write_lines(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def row(frame, t, cx=0.0, **kw):
    base = {"frame": frame, "t": t, "cls": 0, "cx": cx, "cy": 0.0, "vx": 0.0, "vy": 0.0,
            "score": 0.9, "q_loc": 1.0, "q_vel": 1.0}
    base.update(kw)
    return base


def test_empty_file(tmp_path):
    assert fileio.parse_detections(write_lines(tmp_path / "d.jsonl", [])) == []


def test_frames_sorted_and_stable(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [row(1, 0.5, 1.0), row(0, 0.0, 2.0), row(1, 0.5, 3.0)])
    frames = fileio.parse_detections(p)
    assert [f.frame_index for f in frames] == [0, 1]
    assert [d.center.x for d in frames[1].detections] == [1.0, 3.0]


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps(row(0, 0.0)) + "\n{not json\n")
    with pytest.raises(FormatError, match=r"d\.jsonl:2"):
        fileio.parse_detections(p)


def test_invalid_detection_reports_line_number(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [row(0, 0.0), row(0, 0.0, score=1.5)])
    with pytest.raises(FormatError, match=r":2: score out of \[0,1\]"):
        fileio.parse_detections(p)


def test_unknown_and_missing_fields(tmp_path):
    with pytest.raises(FormatError, match="unknown field"):
        fileio.parse_detections(write_lines(tmp_path / "a.jsonl", [row(0, 0.0, colour=1)]))
    bad = row(0, 0.0)
    del bad["cx"]
    with pytest.raises(FormatError, match="missing field 'cx'"):
        fileio.parse_detections(write_lines(tmp_path / "b.jsonl", [bad]))


def test_non_monotone_timestamps(tmp_path):
    with pytest.raises(FormatError, match="non-monotone"):
        fileio.parse_detections(write_lines(tmp_path / "a.jsonl", [row(0, 1.0), row(1, 0.5)]))
    with pytest.raises(FormatError, match="two timestamps"):
        fileio.parse_detections(write_lines(tmp_path / "b.jsonl", [row(0, 0.0), row(0, 0.5)]))


def test_missing_qualities_default_with_warning(tmp_path, caplog):
    r = row(0, 0.0)
    del r["q_loc"], r["q_vel"]
    with caplog.at_level(logging.WARNING):
        frames = fileio.parse_detections(write_lines(tmp_path / "d.jsonl", [r, r]))
    d = frames[0].detections[0]
    assert d.loc_quality == 1.0 and d.vel_quality == 1.0
    assert len([m for m in caplog.messages if "defaulting to 1.0" in m]) == 1


def test_detection_round_trip_is_fixed_point(tmp_path):
    s = generate(ScenarioConfig(n_frames=20, miss_rate=0.5, n_objects=2,
                                false_positive_rate_per_frame=1, seed=3))
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    fileio.write_detections(a, s.frames)
    frames = fileio.parse_detections(a)
    assert len(frames) == 20  # empty frames survive as marker lines
    fileio.write_detections(b, frames)
    assert a.read_bytes() == b.read_bytes()
    assert fileio.parse_detections(b) == frames


def test_scenario_round_trip(tmp_path):
    s = generate(ScenarioConfig(n_frames=10, false_positive_rate_per_frame=2, seed=1))
    fileio.write_scenario(tmp_path, s)
    back = fileio.load_scenario(tmp_path)
    assert len(back.frames) == 10
    assert [len(p) for p in back.provenance] == [len(p) for p in s.provenance]
    (tmp_path / "again").mkdir()
    fileio.write_scenario(tmp_path / "again", back)
    for name in fileio.SCENARIO_FILES:
        assert (tmp_path / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_tracks_round_trip(tmp_path):
    s = generate(ScenarioConfig(n_frames=10, seed=1))
    out = track_sequence(s.frames, TrackerConfig())
    fileio.write_tracks(tmp_path / "t.jsonl", out)
    parsed = fileio.parse_tracks(tmp_path / "t.jsonl")
    assert [len(b) for _, _, b in parsed] == [len(f.tracks) for f in out]
    assert parsed[3][2][0].score == pytest.approx(out[3].tracks[0].track_score("mean"), rel=1e-8)


@settings(max_examples=300)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_sig9_is_idempotent_and_close(x):
    y = fileio.sig9(x)
    assert fileio.sig9(y) == y
    assert y == pytest.approx(x, rel=1e-8, abs=1e-300)


def test_sig9_non_finite():
    assert fileio.sig9(math.nan) is None


# --------------------------------------------------------------- config

def test_merge_config_sections_and_coercion():
    cfg = fileio.merge_config(RunConfig(), {
        "seed": 4,
        "tracker": {"mu_v": 0.5, "gate_radius_m": {"0": 2.5}},
        "scenario": {"speed_range_mps": [1, 2]},
    })
    assert cfg.seed == 4 and cfg.tracker.mu_v == 0.5
    assert cfg.tracker.gate_radius_m == {0: 2.5}
    assert cfg.scenario.speed_range_mps == (1.0, 2.0)
    assert cfg.scenario_config().seed == 4


def test_unknown_config_keys_rejected():
    with pytest.raises(FormatError, match="unknown key"):
        fileio.merge_config(RunConfig(), {"trackr": {}})
    with pytest.raises(FormatError, match="unknown key"):
        fileio.merge_config(RunConfig(), {"tracker": {"mu_x": 1}})
    with pytest.raises(FormatError, match="unknown key"):
        fileio.merge_config(RunConfig(), {"scenario": {"seed": 1}})  # seed lives at the top


def test_invalid_config_values_rejected():
    with pytest.raises(FormatError):
        fileio.merge_config(RunConfig(), {"tracker": {"tau": 3}})
    with pytest.raises(FormatError):
        fileio.merge_config(RunConfig(), {"kalman": {"measurement_noise_pos": 0}})


def test_config_dict_round_trip(tmp_path):
    cfg = fileio.merge_config(RunConfig(), {"tracker": {"mode": "kf"}, "fusion": {"alpha": 0.3}})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(fileio.config_to_dict(cfg)))
    assert fileio.merge_config(RunConfig(), fileio.load_config_file(p)) == cfg


def test_config_file_errors(tmp_path):
    (tmp_path / "bad.yaml").write_text("tracker: [1, 2\n")
    with pytest.raises(FormatError):
        fileio.load_config_file(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n")
    with pytest.raises(FormatError):
        fileio.load_config_file(tmp_path / "list.yaml")
    assert fileio.load_config_file(_empty(tmp_path)) == {}


def _empty(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    return p


def test_feature_table(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("a,target,b\n1,0.5,2\n3,1,4\n")
    names, x, t = fileio.read_feature_table(p)
    assert names == ["a", "b"]
    assert x.tolist() == [[1, 2], [3, 4]] and t.tolist() == [0.5, 1.0]
    p.write_text("a,b\n1,2\n")
    with pytest.raises(FormatError, match="target"):
        fileio.read_feature_table(p)
    p.write_text("a,target\n1,x\n")
    with pytest.raises(FormatError, match=":2"):
        fileio.read_feature_table(p)
