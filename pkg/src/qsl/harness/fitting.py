"""Log-log decay fits: the numerical stand-in for O(hbar^N) statements."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import InsufficientSamplesError

NOISE_FLOOR = 1e-14
R2_MIN = 0.98
MIN_POINTS = 4


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r2: float
    window: tuple
    threshold: float
    clamped: tuple = field(default_factory=tuple)

    @property
    def verdict(self) -> bool:
        return bool(self.slope >= self.threshold and self.r2 >= R2_MIN)


def _r2(y: np.ndarray, pred: np.ndarray) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - pred) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return float(min(max(1.0 - ss_res / ss_tot, 0.0), 1.0))


def fit_decay_order(points: Iterable, threshold: float = 4.0, floor: float = NOISE_FLOOR, min_points: int = MIN_POINTS) -> DecayFit:
    """Least squares on (log x, log|value|).

    Values below ``floor`` are clamped to it and flagged. The slope uses all
    points (clamping can only flatten it); r^2 is computed on the unclamped
    points against the fitted line, and is NaN when fewer than three remain.
    ``min_points`` may be lowered to 3 for short sweeps, never below.
    """
    min_points = max(3, int(min_points))
    pts = [(float(x), float(abs(v))) for x, v in points if float(x) > 0 and math.isfinite(float(x))]
    if len(pts) < min_points:
        raise InsufficientSamplesError(f"need at least {min_points} usable points, got {len(pts)}")
    pts.sort()
    x = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    clamped = v < floor
    v = np.where(clamped, floor, v)
    lx, ly = np.log(x), np.log(v)
    slope, intercept = np.polyfit(lx, ly, 1)
    keep = ~clamped
    if keep.sum() >= 3:
        r2 = _r2(ly[keep], slope * lx[keep] + intercept)
    else:
        r2 = float("nan")
    return DecayFit(
        float(slope), float(intercept), r2, (float(x.min()), float(x.max())), float(threshold),
        tuple(bool(c) for c in clamped),
    )


class DecayOrderRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit(x, values)`` then ``predict(x)`` on the
    fitted power law; ``score`` is r^2 in log space."""

    def __init__(self, threshold: float = 4.0, floor: float = NOISE_FLOOR):
        self.threshold = threshold
        self.floor = floor

    def fit(self, X, y):
        x = np.asarray(X, dtype=float).ravel()
        vals = np.asarray(y, dtype=float).ravel()
        if x.shape != vals.shape:
            raise ValueError("X and y must have matching lengths")
        self.fit_ = fit_decay_order(zip(x, vals), self.threshold, self.floor)
        self.slope_ = self.fit_.slope
        self.intercept_ = self.fit_.intercept
        self.r2_ = self.fit_.r2
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "fit_")
        x = np.asarray(X, dtype=float).ravel()
        return np.exp(self.intercept_ + self.slope_ * np.log(x))

    def score(self, X, y, sample_weight=None) -> float:
        check_is_fitted(self, "fit_")
        ly = np.log(np.maximum(np.abs(np.asarray(y, dtype=float).ravel()), self.floor))
        return _r2(ly, np.log(self.predict(X)))
