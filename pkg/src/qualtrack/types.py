"""Shared domain types: BEV vectors, detections, tracks and frames."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple


class Vec2(NamedTuple):
    """A 2D vector in the BEV plane (meters or meters/second)."""

    x: float
    y: float

    def __add__(self, other):  # type: ignore[override]
        return Vec2(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Vec2(self.x - other[0], self.y - other[1])

    def scale(self, k: float) -> "Vec2":
        return Vec2(self.x * k, self.y * k)

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y)


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    if -math.pi <= theta < math.pi:
        return theta
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    wrapped -= math.pi
    # rounding can land exactly on the open end
    if wrapped >= math.pi:
        wrapped -= 2.0 * math.pi
    if wrapped < -math.pi:
        wrapped = -math.pi
    return wrapped


@dataclass(frozen=True)
class Detection:
    """One detected object in a single frame.

    ``loc_quality`` and ``vel_quality`` are the predicted quality of the
    BEV center and of the velocity, both in [0, 1]; they are inputs to the
    tracker and are never recomputed at track time.
    """

    frame_index: int
    class_id: int
    center: Vec2
    height_z: float = 0.0
    extent: Tuple[float, float, float] = (4.0, 2.0, 1.6)
    yaw: float = 0.0
    velocity: Vec2 = Vec2(0.0, 0.0)
    score: float = 1.0
    loc_quality: float = 1.0
    vel_quality: float = 1.0


def validate_detection(d: Detection) -> Optional[str]:
    """Return ``None`` if ``d`` is well formed, else a description of the first violation."""
    if not isinstance(d.frame_index, int) or d.frame_index < 0:
        return "frame_index negative"
    if not (d.center.is_finite() and d.velocity.is_finite()):
        return "non-finite vector"
    for name in ("height_z", "yaw"):
        if not math.isfinite(getattr(d, name)):
            return f"{name} non-finite"
    for name in ("score", "loc_quality", "vel_quality"):
        v = getattr(d, name)
        if not (0.0 <= v <= 1.0):
            return f"{name} out of [0,1]"
    if len(d.extent) != 3 or not all(math.isfinite(e) and e > 0 for e in d.extent):
        return "extent non-positive"
    if not (-math.pi <= d.yaw < math.pi):
        return "yaw not wrapped to [-pi, pi)"
    return None


class TrackStatus(str, enum.Enum):
    TENTATIVE = "Tentative"
    CONFIRMED = "Confirmed"
    LOST = "Lost"
    REMOVED = "Removed"


@dataclass
class Track:
    """A live trajectory.

    Quality scores are copied from the most recently matched detection.
    ``score`` is the last matched detection score; ``score_sum`` and
    ``score_max`` support other track-score aggregations.
    """

    track_id: int
    class_id: int
    center: Vec2
    velocity: Vec2
    score: float
    vel_quality: float
    loc_quality: float
    hits: int = 1
    misses_in_a_row: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    last_update_frame: int = 0
    score_sum: float = 0.0
    score_max: float = 0.0
    kalman: Optional[object] = field(default=None, repr=False, compare=False)

    def track_score(self, how: str = "mean") -> float:
        if how == "mean":
            return self.score_sum / self.hits if self.hits else self.score
        if how == "max":
            return self.score_max
        if how == "last":
            return self.score
        raise ValueError(f"unknown track score aggregation {how!r}")


@dataclass(frozen=True)
class FrameDetections:
    frame_index: int
    timestamp_s: float
    detections: Tuple[Detection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        for d in self.detections:
            if d.frame_index != self.frame_index:
                raise ValueError(
                    f"detection frame_index {d.frame_index} != frame {self.frame_index}"
                )


def check_frame_order(frames: Sequence[FrameDetections]) -> None:
    """Raise ``ValueError`` unless timestamps strictly increase."""
    for prev, cur in zip(frames, frames[1:]):
        if not cur.timestamp_s > prev.timestamp_s:
            raise ValueError(
                f"non-monotonic timestamps: frame {cur.frame_index} at "
                f"{cur.timestamp_s} after {prev.timestamp_s}"
            )
