"""Two-gate quality-aware tracking loop with CV and Kalman baselines.

Every frame the detections are split by classification score (first
gate). Tracks are predicted forward, matched to high-score detections,
and the leftovers are matched to low-score detections. In ``qoa`` mode a
low-score match survives only if the track's velocity quality and the
detection's location quality both clear their thresholds (second gate).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from sklearn.base import BaseEstimator

from . import assignment
from .motion import KalmanConfig, cv_predict, kf_init, kf_predict, kf_update
from .types import (
    Detection,
    FrameDetections,
    Track,
    TrackStatus,
    Vec2,
    check_frame_order,
)

MODES = ("cv", "kf", "qoa")


@dataclass(frozen=True)
class TrackerConfig:
    tau: float = 0.35
    mu_v: float = 0.3
    mu_l: float = 0.3
    max_age: int = 2
    min_hits: int = 1
    mode: str = "qoa"
    gate_radius_m: Union[float, Mapping[int, float]] = 2.0
    class_gated: bool = True
    matcher: str = "hungarian"
    kalman: KalmanConfig = field(default_factory=KalmanConfig)

    def __post_init__(self):
        for name in ("tau", "mu_v", "mu_l"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.max_age < 0 or self.min_hits < 0:
            raise ValueError("max_age and min_hits must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.matcher not in ("hungarian", "greedy"):
            raise ValueError(f"unknown matcher {self.matcher!r}")
        radii = (
            self.gate_radius_m.values()
            if isinstance(self.gate_radius_m, Mapping)
            else [self.gate_radius_m]
        )
        if not all(r > 0 for r in radii):
            raise ValueError("gate radii must be positive")


@dataclass
class TrackerState:
    tracks: List[Track] = field(default_factory=list)
    next_track_id: int = 1
    last_timestamp_s: Optional[float] = None


def split_by_score(dets: Sequence[Detection], tau: float):
    """Partition detections into ``score > tau`` and the rest, keeping order."""
    high = [d for d in dets if d.score > tau]
    low = [d for d in dets if not d.score > tau]
    return high, low


def _match(tracks: List[Track], dets: List[Detection], cfg: TrackerConfig):
    if not tracks or not dets:
        return [], list(range(len(tracks))), list(range(len(dets)))
    cost = assignment.build_cost(
        [t.center for t in tracks],
        dets,
        class_gated=cfg.class_gated,
        gate_radius_m=cfg.gate_radius_m,
        track_classes=[t.class_id for t in tracks],
    )
    solve = assignment.hungarian if cfg.matcher == "hungarian" else assignment.greedy_match
    res = solve(cost)
    return res.pairs, res.unmatched_tracks, res.unmatched_detections


def _predict(track: Track, dt: float, cfg: TrackerConfig) -> Track:
    if cfg.mode == "kf":
        ks = kf_predict(track.kalman, dt, cfg.kalman)
        return dataclasses.replace(track, kalman=ks, center=ks.center, velocity=ks.velocity)
    return dataclasses.replace(track, center=cv_predict(track.center, track.velocity, dt))


def _update(track: Track, det: Detection, frame_index: int, cfg: TrackerConfig) -> Track:
    hits = track.hits + 1
    if cfg.mode == "kf":
        ks = kf_update(track.kalman, det.center, cfg.kalman)
        center, velocity = ks.center, ks.velocity
    else:
        ks = None
        center, velocity = det.center, det.velocity
    return dataclasses.replace(
        track,
        center=center,
        velocity=velocity,
        kalman=ks,
        score=det.score,
        vel_quality=det.vel_quality,
        loc_quality=det.loc_quality,
        hits=hits,
        misses_in_a_row=0,
        status=TrackStatus.CONFIRMED if hits >= cfg.min_hits else TrackStatus.TENTATIVE,
        last_update_frame=frame_index,
        score_sum=track.score_sum + det.score,
        score_max=max(track.score_max, det.score),
    )


def _new_track(track_id: int, det: Detection, frame_index: int, cfg: TrackerConfig) -> Track:
    return Track(
        track_id=track_id,
        class_id=det.class_id,
        center=det.center,
        velocity=det.velocity,
        score=det.score,
        vel_quality=det.vel_quality,
        loc_quality=det.loc_quality,
        hits=1,
        misses_in_a_row=0,
        status=TrackStatus.CONFIRMED if cfg.min_hits <= 1 else TrackStatus.TENTATIVE,
        last_update_frame=frame_index,
        score_sum=det.score,
        score_max=det.score,
        kalman=kf_init(det, cfg.kalman) if cfg.mode == "kf" else None,
    )


def step(
    state: TrackerState, frame: FrameDetections, cfg: TrackerConfig
) -> Tuple[TrackerState, List[Track]]:
    """Advance the tracker by one frame; returns the new state and confirmed tracks."""
    if state.last_timestamp_s is None:
        dt = 0.0
    else:
        dt = frame.timestamp_s - state.last_timestamp_s
        if not dt > 0:
            raise ValueError(
                f"non-monotonic timestamps: {frame.timestamp_s} after {state.last_timestamp_s}"
            )

    high, low = split_by_score(frame.detections, cfg.tau)
    tracks = [_predict(t, dt, cfg) for t in state.tracks]

    pairs_hi, rem_tracks, rem_high = _match(tracks, high, cfg)
    matched: Dict[int, Detection] = {i: high[j] for i, j in pairs_hi}

    remain = [tracks[i] for i in rem_tracks]
    pairs_lo, _, _ = _match(remain, low, cfg)
    for ri, j in pairs_lo:
        t, d = remain[ri], low[j]
        if cfg.mode == "qoa" and (t.vel_quality < cfg.mu_v or d.loc_quality < cfg.mu_l):
            continue
        matched[rem_tracks[ri]] = d

    survivors: List[Track] = []
    for i, t in enumerate(tracks):
        if i in matched:
            survivors.append(_update(t, matched[i], frame.frame_index, cfg))
            continue
        misses = t.misses_in_a_row + 1
        if misses > cfg.max_age:
            continue
        status = TrackStatus.LOST if t.status != TrackStatus.TENTATIVE else t.status
        survivors.append(dataclasses.replace(t, misses_in_a_row=misses, status=status))

    next_id = state.next_track_id
    for j in rem_high:
        survivors.append(_new_track(next_id, high[j], frame.frame_index, cfg))
        next_id += 1

    new_state = TrackerState(survivors, next_id, frame.timestamp_s)
    outputs = [t for t in survivors if t.status == TrackStatus.CONFIRMED]
    return new_state, outputs


@dataclass(frozen=True)
class FrameTracks:
    frame_index: int
    timestamp_s: float
    tracks: Tuple[Track, ...]


def track_sequence(frames: Sequence[FrameDetections], cfg: TrackerConfig) -> List[FrameTracks]:
    """Run :func:`step` over ``frames`` from an empty state."""
    check_frame_order(frames)
    state = TrackerState()
    out = []
    for frame in frames:
        state, outputs = step(state, frame, cfg)
        out.append(FrameTracks(frame.frame_index, frame.timestamp_s, tuple(outputs)))
    return out


class QOATracker(BaseEstimator):
    """Estimator-style front end over :func:`track_sequence`.

    Hyperparameters are constructor arguments, so ``get_params`` /
    ``set_params`` / ``clone`` work as for any scikit-learn estimator.
    Tracking needs no fitting; ``fit`` only validates the configuration.
    """

    def __init__(
        self,
        mode="qoa",
        tau=0.35,
        mu_v=0.3,
        mu_l=0.3,
        max_age=2,
        min_hits=1,
        gate_radius_m=2.0,
        class_gated=True,
        matcher="hungarian",
        kalman=None,
    ):
        self.mode = mode
        self.tau = tau
        self.mu_v = mu_v
        self.mu_l = mu_l
        self.max_age = max_age
        self.min_hits = min_hits
        self.gate_radius_m = gate_radius_m
        self.class_gated = class_gated
        self.matcher = matcher
        self.kalman = kalman

    def config(self) -> TrackerConfig:
        return TrackerConfig(
            tau=self.tau,
            mu_v=self.mu_v,
            mu_l=self.mu_l,
            max_age=self.max_age,
            min_hits=self.min_hits,
            mode=self.mode,
            gate_radius_m=self.gate_radius_m,
            class_gated=self.class_gated,
            matcher=self.matcher,
            kalman=self.kalman if self.kalman is not None else KalmanConfig(),
        )

    def fit(self, X=None, y=None):
        self.config_ = self.config()
        return self

    def predict(self, frames: Sequence[FrameDetections]) -> List[FrameTracks]:
        return track_sequence(frames, self.config())
