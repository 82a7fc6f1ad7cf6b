"""JSONL/CSV formats, run configuration and manifests.

Units are meters, m/s, seconds and radians. Every float written by this
module goes through :func:`sig9` so files round-trip exactly: parsing a
written file and writing it again produces the same bytes.

A frame without any detection (or track) is written as a bare marker line
``{"frame": k, "t": t}`` so that empty frames survive a round trip.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import yaml

from . import metrics
from .fusion import FusionConfig
from .motion import KalmanConfig
from .quality import NgqParams, QualityEstimator
from .simulator import GroundTruthFrame, GroundTruthObject, Provenance, Scenario, ScenarioConfig
from .tracker import FrameTracks, TrackerConfig
from .types import Detection, FrameDetections, Vec2, check_frame_order, validate_detection

log = logging.getLogger(__name__)

DETECTION_FIELDS = ("frame", "t", "cls", "cx", "cy", "z", "l", "w", "h", "yaw",
                    "vx", "vy", "score", "q_loc", "q_vel")


class FormatError(ValueError):
    """A file or config that cannot be parsed; the message names the location."""


# --------------------------------------------------------------------- floats

def sig9(x: float) -> Optional[float]:
    """Round to 9 significant digits; non-finite values become ``None``."""
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.9g}")


def _clean(obj):
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return sig9(obj)
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalar
        return _clean(obj.item())
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if hasattr(obj, "value"):  # enum
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_line(obj) -> str:
    return json.dumps(_clean(obj), separators=(",", ":"), allow_nan=False)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_jsonl(path, rows: Iterable) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write(dumps_line(r) + "\n")


def read_jsonl(path) -> List[Tuple[int, dict]]:
    """Return ``(line_number, object)`` pairs, skipping blank lines."""
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{n}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise FormatError(f"{path}:{n}: expected a JSON object")
            out.append((n, obj))
    return out


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    def cell(v):
        if isinstance(v, float):
            v = sig9(v)
            return "nan" if v is None else repr(v)
        return v

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([cell(v) for v in r])


def _num(obj: dict, key: str, where: str, default=None) -> float:
    if key not in obj:
        if default is None:
            raise FormatError(f"{where}: missing field {key!r}")
        return default
    v = obj[key]
    if v is None:
        return float("nan")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(f"{where}: field {key!r} is not a number")
    return float(v)


def _int(obj: dict, key: str, where: str) -> int:
    if key not in obj:
        raise FormatError(f"{where}: missing field {key!r}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise FormatError(f"{where}: field {key!r} is not an integer")
    return int(v)


def _group_frames(rows, path) -> List[Tuple[int, float, List[Tuple[int, dict]]]]:
    """Group rows by frame index and sort frames by timestamp (stable within a frame)."""
    frames: Dict[int, Tuple[float, List]] = {}
    for n, obj in rows:
        where = f"{path}:{n}"
        k = _int(obj, "frame", where)
        t = _num(obj, "t", where)
        if not math.isfinite(t):
            raise FormatError(f"{where}: non-finite timestamp")
        if k in frames and frames[k][0] != t:
            raise FormatError(f"{where}: frame {k} has two timestamps ({frames[k][0]} and {t})")
        frames.setdefault(k, (t, []))[1].append((n, obj))
    ordered = sorted(frames.items(), key=lambda kv: (kv[1][0], kv[0]))
    for (k0, (t0, _)), (k1, (t1, _)) in zip(ordered, ordered[1:]):
        if not (t1 > t0 and k1 > k0):
            raise FormatError(
                f"{path}: non-monotone timestamps: frame {k0} at t={t0}, frame {k1} at t={t1}"
            )
    return [(k, t, [r for r in lines if set(r[1]) != {"frame", "t"}])
            for k, (t, lines) in ordered]


# ----------------------------------------------------------------- detections

def detection_row(d: Detection, t: float) -> dict:
    l, w, h = d.extent
    return {
        "frame": d.frame_index, "t": t, "cls": d.class_id,
        "cx": d.center.x, "cy": d.center.y, "z": d.height_z,
        "l": l, "w": w, "h": h, "yaw": d.yaw,
        "vx": d.velocity.x, "vy": d.velocity.y,
        "score": d.score, "q_loc": d.loc_quality, "q_vel": d.vel_quality,
    }


def write_detections(path, frames: Sequence[FrameDetections]) -> None:
    def rows():
        for f in frames:
            if not f.detections:
                yield {"frame": f.frame_index, "t": f.timestamp_s}
            for d in f.detections:
                yield detection_row(d, f.timestamp_s)

    write_jsonl(path, rows())


def _parse_detection(obj: dict, k: int, where: str, warned: List[bool]) -> Detection:
    unknown = set(obj) - set(DETECTION_FIELDS)
    if unknown:
        raise FormatError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing_q = [q for q in ("q_loc", "q_vel") if q not in obj]
    if missing_q and not warned[0]:
        log.warning("%s: %s missing, defaulting to 1.0", where, " and ".join(missing_q))
        warned[0] = True
    d = Detection(
        frame_index=k,
        class_id=_int(obj, "cls", where),
        center=Vec2(_num(obj, "cx", where), _num(obj, "cy", where)),
        height_z=_num(obj, "z", where, 0.0),
        extent=(_num(obj, "l", where, 4.0), _num(obj, "w", where, 2.0), _num(obj, "h", where, 1.6)),
        yaw=_num(obj, "yaw", where, 0.0),
        velocity=Vec2(_num(obj, "vx", where), _num(obj, "vy", where)),
        score=_num(obj, "score", where),
        loc_quality=_num(obj, "q_loc", where, 1.0),
        vel_quality=_num(obj, "q_vel", where, 1.0),
    )
    problem = validate_detection(d)
    if problem:
        raise FormatError(f"{where}: {problem}")
    return d


def parse_detections(path) -> List[FrameDetections]:
    warned = [False]
    out = []
    for k, t, lines in _group_frames(read_jsonl(path), path):
        dets = tuple(_parse_detection(obj, k, f"{path}:{n}", warned) for n, obj in lines)
        out.append(FrameDetections(k, t, dets))
    return out


# ---------------------------------------------------------------- ground truth

def write_ground_truth(path, frames: Sequence[GroundTruthFrame]) -> None:
    def rows():
        for f in frames:
            if not f.objects:
                yield {"frame": f.frame_index, "t": f.timestamp_s}
            for o in f.objects:
                yield {"frame": f.frame_index, "t": f.timestamp_s, "id": o.object_id,
                       "cls": o.class_id, "cx": o.center.x, "cy": o.center.y,
                       "vx": o.velocity.x, "vy": o.velocity.y}

    write_jsonl(path, rows())


def parse_ground_truth(path) -> List[GroundTruthFrame]:
    out = []
    for k, t, lines in _group_frames(read_jsonl(path), path):
        objs = []
        for n, obj in lines:
            where = f"{path}:{n}"
            objs.append(GroundTruthObject(
                _int(obj, "id", where),
                Vec2(_num(obj, "cx", where), _num(obj, "cy", where)),
                Vec2(_num(obj, "vx", where, 0.0), _num(obj, "vy", where, 0.0)),
                _int(obj, "cls", where),
            ))
        out.append(GroundTruthFrame(k, t, tuple(objs)))
    return out


# ---------------------------------------------------------------------- tracks

def write_tracks(path, frames: Sequence[FrameTracks], track_score: str = "mean") -> None:
    def rows():
        for f in frames:
            if not f.tracks:
                yield {"frame": f.frame_index, "t": f.timestamp_s}
            for tr in f.tracks:
                yield {"frame": f.frame_index, "t": f.timestamp_s, "id": tr.track_id,
                       "cls": tr.class_id, "cx": tr.center.x, "cy": tr.center.y,
                       "vx": tr.velocity.x, "vy": tr.velocity.y, "score": tr.score,
                       "track_score": tr.track_score(track_score),
                       "q_loc": tr.loc_quality, "q_vel": tr.vel_quality, "hits": tr.hits}

    write_jsonl(path, rows())


def parse_tracks(path) -> List[Tuple[int, float, List[metrics.HypBox]]]:
    """Tracks as ``(frame, t, boxes)``; a box's score is the file's ``track_score``."""
    out = []
    for k, t, lines in _group_frames(read_jsonl(path), path):
        boxes = []
        for n, obj in lines:
            where = f"{path}:{n}"
            boxes.append(metrics.HypBox(_int(obj, "id", where), _int(obj, "cls", where),
                                        _num(obj, "cx", where), _num(obj, "cy", where),
                                        _num(obj, "track_score", where, _num(obj, "score", where, 1.0))))
        out.append((k, t, boxes))
    return out


def align_for_evaluation(gt: Sequence[GroundTruthFrame], tracks) -> Tuple[list, list]:
    """Pair gt and track frames by frame index; a frame absent on one side is empty there."""
    g = {f.frame_index: [metrics.GTBox(o.object_id, o.class_id, o.center.x, o.center.y)
                         for o in f.objects] for f in gt}
    h = {k: boxes for k, _, boxes in tracks}
    keys = sorted(set(g) | set(h))
    return [g.get(k, []) for k in keys], [h.get(k, []) for k in keys]


# ------------------------------------------------------------------ provenance

def write_provenance(path, scenario: Scenario) -> None:
    def rows():
        for gtf, prov in zip(scenario.ground_truth, scenario.provenance):
            for p in prov:
                yield {"frame": p.frame_index, "t": gtf.timestamp_s, "index": p.index,
                       "gt_id": p.gt_object_id, "ex": p.loc_error.x, "ey": p.loc_error.y,
                       "evx": p.vel_error.x, "evy": p.vel_error.y, "degraded": p.degraded,
                       "pos_sigma": p.pos_sigma, "vel_sigma": p.vel_sigma}

    write_jsonl(path, rows())


def parse_provenance(path) -> Dict[int, List[Provenance]]:
    out: Dict[int, List[Provenance]] = {}
    for n, obj in read_jsonl(path):
        where = f"{path}:{n}"
        gid = obj.get("gt_id")
        out.setdefault(_int(obj, "frame", where), []).append(Provenance(
            _int(obj, "frame", where), _int(obj, "index", where),
            None if gid is None else _int(obj, "gt_id", where),
            Vec2(_num(obj, "ex", where), _num(obj, "ey", where)),
            Vec2(_num(obj, "evx", where), _num(obj, "evy", where)),
            bool(obj.get("degraded", False)),
            _num(obj, "pos_sigma", where, 0.0), _num(obj, "vel_sigma", where, 0.0),
        ))
    return out


SCENARIO_FILES = ("gt.jsonl", "detections.jsonl", "provenance.jsonl")


def write_scenario(out_dir, scenario: Scenario) -> List[Path]:
    out_dir = Path(out_dir)
    paths = [out_dir / n for n in SCENARIO_FILES]
    write_ground_truth(paths[0], scenario.ground_truth)
    write_detections(paths[1], scenario.frames)
    write_provenance(paths[2], scenario)
    return paths


def load_scenario(directory, config: Optional[ScenarioConfig] = None) -> Scenario:
    """Rebuild a :class:`Scenario` from the three files written by :func:`write_scenario`."""
    directory = Path(directory)
    gt = parse_ground_truth(directory / "gt.jsonl")
    dets = {f.frame_index: f for f in parse_detections(directory / "detections.jsonl")}
    prov = parse_provenance(directory / "provenance.jsonl")
    frames, provenance = [], []
    for g in gt:
        f = dets.get(g.frame_index, FrameDetections(g.frame_index, g.timestamp_s, ()))
        p = tuple(sorted(prov.get(g.frame_index, []), key=lambda x: x.index))
        if len(p) != len(f.detections):
            raise FormatError(
                f"{directory}: frame {g.frame_index} has {len(f.detections)} detections "
                f"but {len(p)} provenance records"
            )
        frames.append(f)
        provenance.append(p)
    return Scenario(config or ScenarioConfig(), tuple(gt), tuple(frames), tuple(provenance))


# ------------------------------------------------------------ quality estimator

def estimator_to_dict(est: QualityEstimator) -> dict:
    return {
        "weights": list(map(float, est.weights)),
        "bias": float(est.bias),
        "offset": None if est.offset is None else list(map(float, est.offset)),
        "scale": None if est.scale is None else list(map(float, est.scale)),
    }


def estimator_from_dict(d: Mapping) -> QualityEstimator:
    import numpy as np

    unknown = set(d) - {"weights", "bias", "offset", "scale"}
    if unknown:
        raise FormatError(f"unknown estimator key(s) {sorted(unknown)}")
    arr = lambda v: None if v is None else np.asarray(v, dtype=float)  # noqa: E731
    return QualityEstimator(arr(d["weights"]), float(d.get("bias", 0.0)),
                            arr(d.get("offset")), arr(d.get("scale")))


def read_feature_table(path) -> Tuple[List[str], "np.ndarray", "np.ndarray"]:
    """CSV with a header; the column named ``target`` is the label, all others are features."""
    import numpy as np

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty feature table")
    header = rows[0]
    if "target" not in header:
        raise FormatError(f"{path}: no 'target' column")
    ti = header.index("target")
    names = [h for i, h in enumerate(header) if i != ti]
    if not names:
        raise FormatError(f"{path}: no feature columns")
    x, t = [], []
    for n, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise FormatError(f"{path}:{n}: expected {len(header)} columns, got {len(r)}")
        try:
            vals = [float(v) for v in r]
        except ValueError:
            raise FormatError(f"{path}:{n}: non-numeric cell") from None
        t.append(vals.pop(ti))
        x.append(vals)
    return names, np.asarray(x, dtype=float).reshape(-1, len(names)), np.asarray(t, dtype=float)


# ---------------------------------------------------------------------- config

@dataclass(frozen=True)
class MetricsConfig:
    match_radius_m: float = 2.0
    n_thresholds: int = 40
    track_score: str = "mean"

    def __post_init__(self):
        if not self.match_radius_m > 0:
            raise ValueError("match_radius_m must be positive")
        if self.n_thresholds < 1:
            raise ValueError("n_thresholds must be positive")
        if self.track_score not in ("mean", "max", "last"):
            raise ValueError("track_score must be mean, max or last")


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 500
    learning_rate: float = 0.1
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 0 or not self.learning_rate > 0:
            raise ValueError("epochs must be >= 0 and learning_rate > 0")


@dataclass(frozen=True)
class AnalysisConfig:
    bins: int = 30
    sample_size: int = 1000

    def __post_init__(self):
        if self.bins < 1 or self.sample_size < 0:
            raise ValueError("bins must be positive and sample_size non-negative")


@dataclass(frozen=True)
class RunConfig:
    """Everything a command can be told, grouped by component."""

    seed: int = 0
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    fuse: bool = False
    ngq: NgqParams = field(default_factory=NgqParams)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    io: Mapping[str, Any] = field(default_factory=dict)

    def tracker_config(self) -> TrackerConfig:
        return dataclasses.replace(self.tracker, kalman=self.kalman)

    def scenario_config(self) -> ScenarioConfig:
        return dataclasses.replace(self.scenario, seed=self.seed,
                                   gamma_loc=self.ngq.gamma_loc, gamma_vel=self.ngq.gamma_vel)


_SECTIONS = {
    "tracker": TrackerConfig,
    "kalman": KalmanConfig,
    "fusion": FusionConfig,
    "ngq": NgqParams,
    "metrics": MetricsConfig,
    "scenario": ScenarioConfig,
    "fit": FitConfig,
    "analysis": AnalysisConfig,
}
# keys that live in their own section even though the dataclass also carries them
_SHADOWED = {"tracker": {"kalman"}, "scenario": {"seed", "gamma_loc", "gamma_vel"}}


def config_to_dict(cfg: RunConfig) -> dict:
    out: Dict[str, Any] = {"seed": cfg.seed, "fuse": cfg.fuse, "io": dict(cfg.io)}
    for name in _SECTIONS:
        d = dataclasses.asdict(getattr(cfg, name))
        for k in _SHADOWED.get(name, ()):
            d.pop(k, None)
        out[name] = d
    return _clean(out)


def _coerce(value, default):
    """Bring a parsed value into the shape of the default (tuples stay tuples)."""
    if isinstance(value, Mapping):  # per-class gate radii; JSON turns int keys into strings
        try:
            return {int(k): float(v) for k, v in value.items()}
        except (TypeError, ValueError):
            raise FormatError(f"expected a class-id -> number mapping, got {value!r}") from None
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(_coerce(v, default[0] if default else None) for v in value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if default is None and isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def merge_config(base: RunConfig, overrides: Mapping[str, Any], source: str = "config") -> RunConfig:
    """Apply a nested mapping on top of ``base``; unknown keys are rejected."""
    if not isinstance(overrides, Mapping):
        raise FormatError(f"{source}: top level must be a mapping")
    changes: Dict[str, Any] = {}
    for key, value in overrides.items():
        if key in ("seed", "fuse"):
            changes[key] = value
        elif key == "io":
            if not isinstance(value, Mapping):
                raise FormatError(f"{source}: 'io' must be a mapping")
            changes["io"] = {**base.io, **value}
        elif key in _SECTIONS:
            if not isinstance(value, Mapping):
                raise FormatError(f"{source}: section {key!r} must be a mapping")
            current = getattr(base, key)
            allowed = {f.name for f in dataclasses.fields(current)} - _SHADOWED.get(key, set())
            unknown = set(value) - allowed
            if unknown:
                raise FormatError(f"{source}: unknown key(s) in {key!r}: {sorted(unknown)}")
            try:
                changes[key] = dataclasses.replace(
                    current, **{k: _coerce(v, getattr(current, k)) for k, v in value.items()})
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{source}: invalid {key!r}: {exc}") from None
        else:
            raise FormatError(f"{source}: unknown key {key!r}")
    try:
        return dataclasses.replace(base, **changes)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{source}: {exc}") from None


def load_config_file(path) -> dict:
    """Read a YAML or JSON mapping. A manifest is accepted too: its ``config`` is used."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: cannot parse config ({exc})") from None
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from None
    if data is None:
        return {}
    if isinstance(data, dict) and "config" in data and "command" in data:
        data = data["config"]
    if not isinstance(data, dict):
        raise FormatError(f"{path}: top level must be a mapping")
    return data


def manifest(command: str, argv: Sequence[str], cfg: RunConfig, outputs: Sequence) -> dict:
    from . import __version__

    return {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "config": config_to_dict(cfg),
        "outputs": sorted(Path(p).name for p in outputs),
    }
