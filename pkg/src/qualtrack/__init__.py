"""Quality-aware multi-object tracking in bird's-eye view, with a simulator and metrics."""

__version__ = "0.1.0"

from .assignment import AssignmentResult, CostMatrix, greedy_match, hungarian
from .fusion import BevNms, FusionConfig, bev_nms, fuse_score, sweep_alpha
from .metrics import MetricsReport, QualityAnalysis, analyze_quality, clear_mot, evaluate
from .motion import KalmanConfig, KalmanState, cv_predict, kf_init, kf_predict, kf_update
from .quality import (
    NgqParams,
    QualityEstimator,
    QualityRegressor,
    bce_quality_loss,
    fit_quality_estimator,
    ngq,
)
from .simulator import Scenario, ScenarioConfig, generate
from .tracker import QOATracker, TrackerConfig, track_sequence
from .types import Detection, FrameDetections, Track, TrackStatus, Vec2

__all__ = [
    "AssignmentResult", "BevNms", "CostMatrix", "Detection", "FrameDetections", "FusionConfig",
    "KalmanConfig", "KalmanState", "MetricsReport", "NgqParams", "QOATracker", "QualityAnalysis",
    "QualityEstimator", "QualityRegressor", "Scenario", "ScenarioConfig", "Track",
    "TrackStatus", "TrackerConfig", "Vec2", "analyze_quality", "bce_quality_loss", "bev_nms",
    "clear_mot", "cv_predict", "evaluate", "fit_quality_estimator", "fuse_score", "generate",
    "greedy_match", "hungarian", "kf_init", "kf_predict", "kf_update", "ngq", "sweep_alpha",
    "track_sequence",
]
