"""Constant-velocity prediction and a position-measured Kalman filter baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import Detection, Vec2


def cv_predict(center, velocity, dt: float) -> Vec2:
    """Advance a center by ``velocity * dt``."""
    if dt < 0:
        raise ValueError("non-monotonic timestamps")
    out = Vec2(center[0] + velocity[0] * dt, center[1] + velocity[1] * dt)
    if not out.is_finite():
        raise ValueError("non-finite vector")
    return out


@dataclass(frozen=True)
class KalmanConfig:
    process_noise_pos: float = 0.1
    process_noise_vel: float = 0.1
    measurement_noise_pos: float = 0.5
    initial_pos_var: float = 1.0
    initial_vel_var: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"KalmanConfig.{name} must be > 0")


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray  # (cx, cy, vx, vy)
    covariance: np.ndarray

    @property
    def center(self) -> Vec2:
        return Vec2(float(self.mean[0]), float(self.mean[1]))

    @property
    def velocity(self) -> Vec2:
        return Vec2(float(self.mean[2]), float(self.mean[3]))


_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def _transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def kf_init(d: Detection, cfg: KalmanConfig) -> KalmanState:
    mean = np.array([d.center.x, d.center.y, d.velocity.x, d.velocity.y], dtype=float)
    cov = np.diag(
        [cfg.initial_pos_var, cfg.initial_pos_var, cfg.initial_vel_var, cfg.initial_vel_var]
    )
    return KalmanState(mean, cov)


def kf_predict(s: KalmanState, dt: float, cfg: KalmanConfig) -> KalmanState:
    if dt < 0:
        raise ValueError("non-monotonic timestamps")
    F = _transition(dt)
    Q = np.diag(
        [cfg.process_noise_pos, cfg.process_noise_pos, cfg.process_noise_vel, cfg.process_noise_vel]
    ) * dt
    P = F @ s.covariance @ F.T + Q
    return KalmanState(F @ s.mean, 0.5 * (P + P.T))


def kf_update(s: KalmanState, measured_center, cfg: KalmanConfig) -> KalmanState:
    z = np.asarray(measured_center, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite measurement")
    P = s.covariance
    S = _H @ P @ _H.T + np.eye(2) * cfg.measurement_noise_pos
    try:
        K = np.linalg.solve(S, _H @ P).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance not invertible") from exc
    mean = s.mean + K @ (z - _H @ s.mean)
    P_new = (np.eye(4) - K @ _H) @ P
    return KalmanState(mean, 0.5 * (P_new + P_new.T))
