"""Synthetic BEV scenarios with known ground truth and controlled degradations.

Objects move at constant velocity inside a square arena and reflect off its
walls. Each frame an object may be missed (occlusion); otherwise it is
observed with isotropic Gaussian position and velocity noise. A fixed
cohort of objects is "blurred": larger velocity noise and a lower score.
False positives are Poisson per frame, either uniform in the arena or as
ghosts close to a real object. Qualities are NGQ of the stored true
errors (oracle), a logit-noised version of it, or a learned estimate.
``split_oracle`` keeps only one informative quality per cohort: blurred
objects carry an oracle velocity quality and a blind location quality of
1.0, clean objects the reverse. A false positive follows the cohort of the
object its errors are measured against.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .quality import NgqParams, QualityEstimator, estimator_predict
from .types import Detection, FrameDetections, Vec2, wrap_angle

QUALITY_MODES = ("oracle", "learned", "noisy_oracle", "split_oracle")
CLASS_EXTENTS = {0: (4.5, 1.9, 1.6), 1: (0.8, 0.7, 1.7), 2: (10.0, 2.8, 3.2)}
FEATURE_NAMES = ("score", "noise_sigma", "error_norm", "log_error_norm")


@dataclass(frozen=True)
class ScenarioConfig:
    n_objects: int = 20
    n_frames: int = 100
    dt_s: float = 0.5
    arena_half_extent_m: float = 50.0
    speed_range_mps: Tuple[float, float] = (0.0, 10.0)
    pos_noise_sigma_m: float = 0.2
    vel_noise_sigma_mps: float = 0.5
    degraded_fraction: float = 0.0
    degraded_vel_noise_sigma_mps: float = 2.5
    degraded_score_drop: float = 0.3
    miss_rate: float = 0.0
    false_positive_rate_per_frame: float = 0.0
    quality_annotation: str = "oracle"
    seed: int = 0
    # extensions, all neutral at their defaults
    n_classes: int = 1
    score_range: Tuple[float, float] = (0.5, 1.0)
    fp_score_range: Tuple[float, float] = (0.05, 0.35)
    fp_near_object_fraction: float = 0.0
    fp_near_distance_m: Tuple[float, float] = (1.0, 2.0)
    fp_vel_noise_sigma_mps: float = 3.0
    duplicate_rate: float = 0.0
    noise_coupling: float = 0.0
    quality_noise_sigma: float = 0.5
    gamma_loc: float = 1.0
    gamma_vel: float = 3.0
    initial_states: Optional[Tuple[Tuple[float, float, float, float, int], ...]] = None

    def __post_init__(self):
        if self.n_objects < 1 or self.n_frames < 1:
            raise ValueError("degenerate scenario: need at least one object and one frame")
        if not (self.dt_s > 0 and self.arena_half_extent_m > 0):
            raise ValueError("dt_s and arena_half_extent_m must be positive")
        lo, hi = self.speed_range_mps
        if not 0 <= lo <= hi:
            raise ValueError("speed_range_mps must satisfy 0 <= min <= max")
        for name in (
            "pos_noise_sigma_m",
            "vel_noise_sigma_mps",
            "degraded_vel_noise_sigma_mps",
            "false_positive_rate_per_frame",
            "quality_noise_sigma",
            "fp_vel_noise_sigma_mps",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in (
            "degraded_fraction",
            "degraded_score_drop",
            "miss_rate",
            "fp_near_object_fraction",
            "duplicate_rate",
            "noise_coupling",
        ):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.quality_annotation not in QUALITY_MODES:
            raise ValueError(f"quality_annotation must be one of {QUALITY_MODES}")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        NgqParams(self.gamma_loc, self.gamma_vel)
        if self.initial_states is not None and len(self.initial_states) != self.n_objects:
            raise ValueError("initial_states must list exactly n_objects entries")


@dataclass(frozen=True)
class GroundTruthObject:
    object_id: int
    center: Vec2
    velocity: Vec2
    class_id: int


@dataclass(frozen=True)
class GroundTruthFrame:
    frame_index: int
    timestamp_s: float
    objects: Tuple[GroundTruthObject, ...]


@dataclass(frozen=True)
class Provenance:
    """Where a detection came from and its true errors (detected minus true).

    ``gt_object_id`` is ``None`` for false positives, whose errors are
    measured against the nearest ground-truth object of the frame.
    """

    frame_index: int
    index: int
    gt_object_id: Optional[int]
    loc_error: Vec2
    vel_error: Vec2
    degraded: bool
    pos_sigma: float
    vel_sigma: float

    @property
    def is_false_positive(self) -> bool:
        return self.gt_object_id is None


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    ground_truth: Tuple[GroundTruthFrame, ...]
    frames: Tuple[FrameDetections, ...]
    provenance: Tuple[Tuple[Provenance, ...], ...]

    def iter_detections(self):
        for frame, prov in zip(self.frames, self.provenance):
            yield from zip(frame.detections, prov)


def _reflect(pos: float, vel: float, half: float) -> Tuple[float, float]:
    # fold into [-half, half]; handles steps longer than the arena
    period = 4.0 * half
    shifted = math.fmod(pos + half, period)
    if shifted < 0:
        shifted += period
    if shifted <= 2.0 * half:
        return shifted - half, vel
    return 3.0 * half - shifted, -vel


def _initial_states(cfg: ScenarioConfig, rng: np.random.Generator):
    if cfg.initial_states is not None:
        return [tuple(float(v) for v in s[:4]) + (int(s[4]),) for s in cfg.initial_states]
    half = cfg.arena_half_extent_m
    states = []
    for k in range(cfg.n_objects):
        x, y = rng.uniform(-half, half, size=2)
        speed = rng.uniform(*cfg.speed_range_mps)
        heading = rng.uniform(-math.pi, math.pi)
        states.append(
            (float(x), float(y), speed * math.cos(heading), speed * math.sin(heading), k % cfg.n_classes)
        )
    return states


def _ground_truth(cfg: ScenarioConfig, rng: np.random.Generator) -> List[GroundTruthFrame]:
    states = _initial_states(cfg, rng)
    half = cfg.arena_half_extent_m
    frames = []
    for k in range(cfg.n_frames):
        objects = []
        for oid, (x, y, vx, vy, cls) in enumerate(states, start=1):
            objects.append(GroundTruthObject(oid, Vec2(x, y), Vec2(vx, vy), cls))
        frames.append(GroundTruthFrame(k, k * cfg.dt_s, tuple(objects)))
        new_states = []
        for x, y, vx, vy, cls in states:
            nx, nvx = _reflect(x + vx * cfg.dt_s, vx, half)
            ny, nvy = _reflect(y + vy * cfg.dt_s, vy, half)
            new_states.append((nx, ny, nvx, nvy, cls))
        states = new_states
    return frames


def _noise(rng, pos_sigma, vel_sigma, coupling):
    e_pos = rng.normal(0.0, 1.0, size=2)
    e_vel = rng.normal(0.0, 1.0, size=2)
    if coupling > 0:
        e_vel = coupling * e_pos + math.sqrt(1.0 - coupling**2) * e_vel
    return Vec2(*(pos_sigma * e_pos)), Vec2(*(vel_sigma * e_vel))


def _oracle_quality(err: Vec2, gamma: float) -> float:
    return math.exp(-math.hypot(err.x, err.y) / gamma)


def _noisy(q: float, sigma: float, rng) -> float:
    q = min(max(q, 1e-6), 1.0 - 1e-6)
    z = math.log(q / (1.0 - q)) + rng.normal(0.0, sigma)
    return 1.0 / (1.0 + math.exp(-z))


def generate(cfg: ScenarioConfig, estimator: Optional[QualityEstimator] = None,
             vel_estimator: Optional[QualityEstimator] = None) -> Scenario:
    """Build a scenario deterministically from ``cfg.seed``.

    ``learned`` annotation needs ``estimator`` (and optionally a separate
    ``vel_estimator``); see :func:`annotate_learned_quality`.
    """
    if cfg.quality_annotation == "learned" and estimator is None:
        raise ValueError("learned quality annotation needs an estimator")
    rng = np.random.default_rng(cfg.seed)
    gt_frames = _ground_truth(cfg, rng)
    n_degraded = int(round(cfg.degraded_fraction * cfg.n_objects))
    degraded_ids = set((rng.permutation(cfg.n_objects)[:n_degraded] + 1).tolist())
    half = cfg.arena_half_extent_m

    frames, provenance = [], []
    for gtf in gt_frames:
        dets: List[Detection] = []
        prov: List[Provenance] = []
        for obj in gtf.objects:
            degraded = obj.object_id in degraded_ids
            vel_sigma = cfg.degraded_vel_noise_sigma_mps if degraded else cfg.vel_noise_sigma_mps
            copies = 0 if rng.random() < cfg.miss_rate else 1
            if copies and rng.random() < cfg.duplicate_rate:
                copies = 2
            for _ in range(copies):
                e_loc, e_vel = _noise(rng, cfg.pos_noise_sigma_m, vel_sigma, cfg.noise_coupling)
                score = rng.uniform(*cfg.score_range)
                if degraded:
                    score -= cfg.degraded_score_drop
                score = min(max(score, 0.0), 1.0)
                dets.append(_split(_make_detection(gtf.frame_index, obj.class_id, obj.center + e_loc,
                                                   obj.velocity + e_vel, score, e_loc, e_vel, cfg, rng),
                                   degraded, cfg))
                prov.append(Provenance(gtf.frame_index, len(prov), obj.object_id, e_loc, e_vel,
                                       degraded, cfg.pos_noise_sigma_m, vel_sigma))

        n_fp = int(rng.poisson(cfg.false_positive_rate_per_frame))
        for _ in range(n_fp):
            if rng.random() < cfg.fp_near_object_fraction:
                anchor = gtf.objects[int(rng.integers(len(gtf.objects)))]
                r = rng.uniform(*cfg.fp_near_distance_m)
                phi = rng.uniform(-math.pi, math.pi)
                center = anchor.center + (r * math.cos(phi), r * math.sin(phi))
                velocity = anchor.velocity + tuple(rng.normal(0.0, cfg.fp_vel_noise_sigma_mps, size=2))
                cls = anchor.class_id
            else:
                center = Vec2(*rng.uniform(-half, half, size=2))
                velocity = Vec2(*rng.normal(0.0, cfg.fp_vel_noise_sigma_mps, size=2))
                cls = int(rng.integers(cfg.n_classes))
            score = rng.uniform(*cfg.fp_score_range)
            nearest = min(gtf.objects, key=lambda o: (center - o.center).norm())
            e_loc, e_vel = center - nearest.center, velocity - nearest.velocity
            dets.append(_split(_make_detection(gtf.frame_index, cls, center, velocity, score,
                                               e_loc, e_vel, cfg, rng),
                               nearest.object_id in degraded_ids, cfg))
            prov.append(Provenance(gtf.frame_index, len(prov), None, e_loc, e_vel, False,
                                   cfg.pos_noise_sigma_m, cfg.vel_noise_sigma_mps))
        frames.append(FrameDetections(gtf.frame_index, gtf.timestamp_s, tuple(dets)))
        provenance.append(tuple(prov))

    scenario = Scenario(cfg, tuple(gt_frames), tuple(frames), tuple(provenance))
    if cfg.quality_annotation == "learned":
        scenario = annotate_learned_quality(scenario, estimator, vel_estimator)
    return scenario


def _split(det: Detection, blurred: bool, cfg: ScenarioConfig) -> Detection:
    if cfg.quality_annotation != "split_oracle":
        return det
    if blurred:
        return dataclasses.replace(det, loc_quality=1.0)
    return dataclasses.replace(det, vel_quality=1.0)


def _make_detection(frame_index, cls, center, velocity, score, e_loc, e_vel, cfg, rng):
    q_loc = _oracle_quality(e_loc, cfg.gamma_loc)
    q_vel = _oracle_quality(e_vel, cfg.gamma_vel)
    if cfg.quality_annotation == "noisy_oracle":
        q_loc = _noisy(q_loc, cfg.quality_noise_sigma, rng)
        q_vel = _noisy(q_vel, cfg.quality_noise_sigma, rng)
    yaw = wrap_angle(math.atan2(velocity[1], velocity[0])) if Vec2(*velocity).norm() > 0 else 0.0
    return Detection(
        frame_index=frame_index,
        class_id=cls,
        center=Vec2(*center),
        height_z=CLASS_EXTENTS.get(cls, (4.0, 2.0, 1.6))[2] / 2.0,
        extent=CLASS_EXTENTS.get(cls, (4.0, 2.0, 1.6)),
        yaw=yaw,
        velocity=Vec2(*velocity),
        score=float(score),
        loc_quality=q_loc,
        vel_quality=q_vel,
    )


def quality_features(scenario: Scenario, kind: str) -> Tuple[np.ndarray, np.ndarray]:
    """Per-detection features and oracle NGQ targets for ``kind`` in {"loc", "vel"}.

    Features: detection score, the injected noise sigma, the realized
    error magnitude and its log. Rows follow frame order, then detection
    order within a frame.
    """
    if kind not in ("loc", "vel"):
        raise ValueError("kind must be 'loc' or 'vel'")
    gamma = scenario.config.gamma_loc if kind == "loc" else scenario.config.gamma_vel
    rows, targets = [], []
    for det, prov in scenario.iter_detections():
        err = (prov.loc_error if kind == "loc" else prov.vel_error).norm()
        sigma = prov.pos_sigma if kind == "loc" else prov.vel_sigma
        rows.append((det.score, sigma, err, math.log(err + 1e-3)))
        targets.append(math.exp(-err / gamma))
    x = np.asarray(rows, dtype=float).reshape(-1, len(FEATURE_NAMES))
    return x, np.asarray(targets, dtype=float)


def annotate_learned_quality(
    s: Scenario, est: QualityEstimator, vel_est: Optional[QualityEstimator] = None
) -> Scenario:
    """Replace stored qualities with estimator outputs; provenance is untouched."""
    vel_est = est if vel_est is None else vel_est
    for e in (est, vel_est):
        if e.n_features != len(FEATURE_NAMES):
            raise ValueError(
                f"estimator expects {e.n_features} features, simulator provides {len(FEATURE_NAMES)}"
            )
    x_loc, _ = quality_features(s, "loc")
    x_vel, _ = quality_features(s, "vel")
    q_loc = estimator_predict(est, x_loc) if len(x_loc) else np.zeros(0)
    q_vel = estimator_predict(vel_est, x_vel) if len(x_vel) else np.zeros(0)
    k = 0
    frames = []
    for frame in s.frames:
        dets = []
        for d in frame.detections:
            dets.append(dataclasses.replace(d, loc_quality=float(q_loc[k]), vel_quality=float(q_vel[k])))
            k += 1
        frames.append(FrameDetections(frame.frame_index, frame.timestamp_s, tuple(dets)))
    cfg = dataclasses.replace(s.config, quality_annotation="learned")
    return Scenario(cfg, s.ground_truth, tuple(frames), s.provenance)
