"""Feature scaling with z-score outlier repair.

Fitting replaces samples whose |z| exceeds the outlier threshold with a
rolling median (window 24), then standardizes each feature to zero mean
and unit variance.  The fitted state reapplies the same affine map to
validation/test data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

OUTLIER_Z = 5.0
MEDIAN_WINDOW = 24


def rolling_median(values: np.ndarray, window: int = MEDIAN_WINDOW) -> np.ndarray:
    """Centered rolling median (window shrinks near the edges)."""
    n = values.size
    half = window // 2
    out = np.empty(n)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half)
        out[i] = np.median(values[lo:hi] if hi > lo else values[i:i + 1])
    return out


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray
    outlier_z: float
    feature_names: tuple[str, ...] | None = None

    def transform(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.mean.size:
            raise ValidationError(
                f"scaler fitted on {self.mean.size} features, got {x.shape[-1]}"
            )
        return (x - self.mean) / self.scale

    def inverse_transform(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) * self.scale + self.mean


def normalize(features, *, outlier_z: float = OUTLIER_Z,
              feature_names=None) -> tuple[np.ndarray, Scaler]:
    """Standardize columns of ``[n_samples, n_features]`` to zero mean, unit variance.

    Samples with |z| above ``outlier_z`` (z computed against the raw
    column statistics) are replaced by the local rolling median before
    the scaling statistics are fitted.  A zero-variance column is an
    error naming the feature.
    """
    x = np.array(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("normalize expects [n_samples >= 2, n_features]")
    if not np.all(np.isfinite(x)):
        raise ValidationError("normalize input contains non-finite values")
    names = tuple(feature_names) if feature_names is not None else None
    if names is not None and len(names) != x.shape[1]:
        raise ValidationError("feature_names length does not match feature count")

    for j in range(x.shape[1]):
        col = x[:, j]
        raw_std = col.std()
        if raw_std == 0:
            label = names[j] if names else f"column {j}"
            raise ValidationError(f"feature '{label}' has zero variance")
        z = np.abs(col - col.mean()) / raw_std
        bad = z > outlier_z
        if np.any(bad):
            med = rolling_median(col)
            col = col.copy()
            col[bad] = med[bad]
            x[:, j] = col

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    for j in range(x.shape[1]):
        if std[j] == 0:
            label = names[j] if names else f"column {j}"
            raise ValidationError(f"feature '{label}' has zero variance after outlier repair")
    scaler = Scaler(mean=mean, scale=std, outlier_z=outlier_z, feature_names=names)
    return (x - mean) / std, scaler
