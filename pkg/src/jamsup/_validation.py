"""Input checks for complex signal batches (sklearn's check_array rejects complex)."""
from __future__ import annotations

import numpy as np


def check_signals(X, length: int | None = None, name: str = "X") -> np.ndarray:
    """Return ``X`` as a 2-D complex128 array of shape (n_samples, length)."""
    X = np.asarray(X)
    if X.ndim == 1:
        raise ValueError(
            f"{name} must be 2-D (n_samples, n_chips); reshape a single signal with X[None]"
        )
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} has no samples")
    if not np.issubdtype(X.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got dtype {X.dtype}")
    X = X.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinity")
    if length is not None and X.shape[1] != length:
        raise ValueError(f"{name} has {X.shape[1]} chips per sample, expected {length}")
    return X


def check_signal(x, length: int | None = None, name: str = "signal") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    return check_signals(x[None], length, name)[0]
