"""Normalized Gaussian quality, its BCE objective and a small learnable estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

LOG_EPS = 1e-7


@dataclass(frozen=True)
class NgqParams:
    gamma_loc: float = 1.0
    gamma_vel: float = 3.0

    def __post_init__(self):
        if not (self.gamma_loc > 0 and self.gamma_vel > 0):
            raise ValueError("NGQ gamma must be strictly positive")


def ngq(pred, gt, gamma: float) -> float:
    """Quality of a 2D prediction: ``exp(-||pred - gt|| / gamma)``.

    Equals 1 exactly when ``pred == gt`` and decays towards 0 as the
    Euclidean error grows; ``gamma`` sets the decay length.
    """
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    dx = float(pred[0]) - float(gt[0])
    dy = float(pred[1]) - float(gt[1])
    if not (math.isfinite(dx) and math.isfinite(dy)):
        raise ValueError("non-finite vector")
    return math.exp(-math.hypot(dx, dy) / gamma)


def ngq_from_error(error_norm, gamma: float):
    """Vectorized NGQ given precomputed error magnitudes."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    return np.exp(-np.asarray(error_norm, dtype=float) / gamma)


def bce_quality_loss(predicted: Sequence[float], target: Sequence[float]) -> float:
    """Mean binary cross entropy between predicted and target qualities.

    Targets may be soft. Predictions are clamped to ``[1e-7, 1 - 1e-7]``.
    """
    p = np.asarray(predicted, dtype=float).ravel()
    t = np.asarray(target, dtype=float).ravel()
    if p.size == 0 or p.size != t.size:
        raise ValueError(f"need equal non-empty lengths, got {p.size} and {t.size}")
    p = np.clip(p, LOG_EPS, 1.0 - LOG_EPS)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


@dataclass
class QualityEstimator:
    """Logistic quality model: ``sigmoid(weights . x + bias)``.

    ``offset`` / ``scale`` optionally standardize raw features before the
    linear map; they default to the identity transform.
    """

    weights: np.ndarray
    bias: float = 0.0
    offset: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    loss_history: List[float] = field(default_factory=list, compare=False)

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.offset is not None:
            self.offset = np.asarray(self.offset, dtype=float)
        if self.scale is not None:
            self.scale = np.asarray(self.scale, dtype=float)
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise ValueError("estimator parameters must be finite")

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def standardize(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.shape[-1] != self.n_features:
            raise ValueError(
                f"feature dimension {x.shape[-1]} does not match estimator ({self.n_features})"
            )
        if self.offset is not None:
            x = x - self.offset
        if self.scale is not None:
            x = x / self.scale
        return x


def estimator_forward(est: QualityEstimator, features) -> float:
    x = est.standardize(np.atleast_1d(features))
    if x.ndim != 1:
        raise ValueError("expected a single feature vector")
    return float(_sigmoid(x @ est.weights + est.bias))


def estimator_predict(est: QualityEstimator, features) -> np.ndarray:
    """Batch forward pass over a ``(n, d)`` feature matrix."""
    x = est.standardize(np.atleast_2d(features))
    return _sigmoid(x @ est.weights + est.bias)


def estimator_gradient(
    est: QualityEstimator, features, target: float
) -> Tuple[np.ndarray, float]:
    """Gradient of the single-sample BCE w.r.t. ``(weights, bias)``."""
    x = est.standardize(np.atleast_1d(features))
    residual = float(_sigmoid(x @ est.weights + est.bias)) - float(target)
    return residual * x, residual


def _batch_loss_and_grad(weights, bias, x, t):
    p = _sigmoid(x @ weights + bias)
    loss = bce_quality_loss(p, t)
    r = (p - t) / len(t)
    return loss, x.T @ r, float(r.sum())


def fit_quality_estimator(
    samples: Sequence[Tuple[Sequence[float], float]],
    epochs: int = 500,
    learning_rate: float = 0.1,
    standardize: bool = False,
) -> QualityEstimator:
    """Full-batch gradient descent on the BCE quality objective.

    Starts from zero parameters. The per-epoch training loss (before each
    update, plus the final loss) is stored in ``loss_history``.
    """
    if len(samples) == 0:
        raise ValueError("empty sample set")
    if not learning_rate > 0:
        raise ValueError("learning_rate must be positive")
    x = np.asarray([np.atleast_1d(f) for f, _ in samples], dtype=float)
    t = np.asarray([tg for _, tg in samples], dtype=float)
    return _fit_arrays(x, t, epochs, learning_rate, standardize)


def _fit_arrays(x, t, epochs, learning_rate, standardize):
    offset = scale = None
    if standardize:
        offset = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        xs = (x - offset) / scale
    else:
        xs = x
    w = np.zeros(x.shape[1])
    b = 0.0
    history = []
    for _ in range(int(epochs)):
        loss, gw, gb = _batch_loss_and_grad(w, b, xs, t)
        history.append(loss)
        w = w - learning_rate * gw
        b = b - learning_rate * gb
    history.append(bce_quality_loss(_sigmoid(xs @ w + b), t))
    return QualityEstimator(w, float(b), offset, scale, history)


class QualityRegressor(BaseEstimator, RegressorMixin):
    """Scikit-learn wrapper around :func:`fit_quality_estimator`.

    ``predict`` returns qualities in (0, 1); ``score`` is R^2 as usual for
    regressors.
    """

    def __init__(self, epochs=500, learning_rate=0.1, standardize=True):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if np.any((y < 0) | (y > 1)):
            raise ValueError("quality targets must lie in [0, 1]")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        self.estimator_ = _fit_arrays(
            X, y.astype(float), self.epochs, self.learning_rate, self.standardize
        )
        self.loss_curve_ = list(self.estimator_.loss_history)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        X = check_array(X)
        return estimator_predict(self.estimator_, X)
