"""Input validation helpers for the estimator API."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError


def check_feature_array(X, n_channels: int = 3) -> np.ndarray:
    """Validate a (n_samples, channels, bins, frames) feature block."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ShapeError(f"expected 4-D feature array (n, c, f, t), got {X.ndim}-D")
    if X.shape[1] != n_channels:
        raise ShapeError(f"expected {n_channels} feature channels, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ConfigError("feature array contains non-finite values")
    return X


def check_labels(y, n_samples: int, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_samples,):
        raise ShapeError(f"expected labels of shape ({n_samples},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == np.floor(y)):
            raise ConfigError("labels must be integers")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ConfigError(f"labels must lie in [0, {num_classes})")
    return y.astype(np.int64)


def check_waveforms(X) -> list[np.ndarray]:
    """Accept a 2-D array or a sequence of 1-D arrays; return float64 rows."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        rows: Sequence = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 1:
        rows = [X]
    else:
        rows = list(X)
    out = []
    for i, row in enumerate(rows):
        arr = np.asarray(row, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError(f"waveform {i} must be 1-D, got {arr.ndim}-D")
        if not np.isfinite(arr).all():
            raise ConfigError(f"waveform {i} contains non-finite samples")
        out.append(arr)
    return out
