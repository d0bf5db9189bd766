"""Temperature and process-point scaling."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import ConfigurationError, EmptyPoolError

DEFAULT_T_MIN = 293.0
DEFAULT_T_MAX = 6500.0
DEFAULT_PERCENTILE = 99.9


@dataclass(frozen=True)
class NormalizationSpec:
    t_min: float = DEFAULT_T_MIN
    t_max: float = DEFAULT_T_MAX
    clip_percentile: float = DEFAULT_PERCENTILE

    def __post_init__(self):
        if not self.t_max > self.t_min:
            raise ConfigurationError(f"t_max ({self.t_max}) must exceed t_min ({self.t_min})")

    def to_dict(self) -> dict:
        return asdict(self)


def normalize(field, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """Clip to [t_min, t_max] and map linearly onto [0, 1] (float64)."""
    t = np.asarray(field, dtype=np.float64)
    return (np.clip(t, spec.t_min, spec.t_max) - spec.t_min) / (spec.t_max - spec.t_min)


def denormalize(field, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    n = np.asarray(field, dtype=np.float64)
    return spec.t_min + n * (spec.t_max - spec.t_min)


def compute_clip_threshold(raw_fields: Iterable[np.ndarray], t_melt: float, percentile: float = DEFAULT_PERCENTILE) -> float:
    """Percentile (linear interpolation) of every pooled temperature above ``t_melt``."""
    pool = [np.asarray(f, dtype=np.float64).ravel() for f in raw_fields]
    pool = np.concatenate(pool) if pool else np.empty(0)
    pool = pool[pool > t_melt]
    if pool.size == 0:
        raise EmptyPoolError(
            f"no temperatures above the melting point {t_melt} K; use the default T_max of {DEFAULT_T_MAX:g} K"
        )
    return float(np.percentile(pool, percentile, method="linear"))


class TemperatureScaler(TransformerMixin, BaseEstimator):
    """Kelvin -> [0, 1] scaler with an optional data-driven upper clip.

    With ``t_max=None`` the upper bound is fitted as the ``clip_percentile``
    of all temperatures above ``t_melt`` in the training fields.
    """

    def __init__(self, t_min=DEFAULT_T_MIN, t_max=DEFAULT_T_MAX, clip_percentile=DEFAULT_PERCENTILE, t_melt=None):
        self.t_min = t_min
        self.t_max = t_max
        self.clip_percentile = clip_percentile
        self.t_melt = t_melt

    def fit(self, X, y=None):
        t_max = self.t_max
        if t_max is None:
            if self.t_melt is None:
                raise ConfigurationError("t_melt is required to fit the clip threshold")
            t_max = compute_clip_threshold([np.asarray(X)], self.t_melt, self.clip_percentile)
        self.spec_ = NormalizationSpec(float(self.t_min), float(t_max), float(self.clip_percentile))
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        return normalize(X, self.spec_)

    def inverse_transform(self, X):
        check_is_fitted(self, "spec_")
        return denormalize(X, self.spec_)


class ProcessPointScaler(TransformerMixin, BaseEstimator):
    """Min-max scaling of (P, V, t) columns onto [0, 1].

    Columns with zero range map to 0. ``ranges`` may be given up front as
    ``[[P_min, P_max], [V_min, V_max], [t_min, t_max]]`` to skip fitting.
    """

    def __init__(self, ranges=None):
        self.ranges = ranges

    def fit(self, X, y=None):
        if self.ranges is not None:
            r = np.asarray(self.ranges, dtype=np.float64)
        else:
            X = check_array(X, dtype=np.float64)
            r = np.stack([X.min(axis=0), X.max(axis=0)], axis=1)
        if r.shape != (3, 2):
            raise ConfigurationError(f"process point ranges must have shape (3, 2), got {r.shape}")
        self.data_min_ = r[:, 0].copy()
        self.data_max_ = r[:, 1].copy()
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 3:
            raise ConfigurationError(f"process points need 3 columns (P, V, t), got {X.shape[1]}")
        span = self.data_max_ - self.data_min_
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (X - self.data_min_) / safe, 0.0)

    def out_of_range(self, X) -> np.ndarray:
        """Boolean (n, 3): which inputs fall outside the fitted ranges."""
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=np.float64)
        return (X < self.data_min_) | (X > self.data_max_)

    def ranges_list(self) -> list[list[float]]:
        check_is_fitted(self, "data_min_")
        return [[float(a), float(b)] for a, b in zip(self.data_min_, self.data_max_)]
