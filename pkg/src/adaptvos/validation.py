"""Input validation helpers for user-facing APIs."""

from __future__ import annotations

import numpy as np


def check_frame(X, name: str = "X") -> np.ndarray:
    """Validate a single HWC RGB frame with values in [0, 1]."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must be an (H, W, 3) RGB frame, got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range "
                         f"[{arr.min():.3g}, {arr.max():.3g}]")
    return arr


def check_video(X, name: str = "X") -> np.ndarray:
    """Validate a (T, H, W, 3) stack of frames with values in [0, 1]."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"{name} must be a (T, H, W, 3) frame stack, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one frame")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_binary_mask(y, shape: tuple[int, int] | None = None, name: str = "y") -> np.ndarray:
    """Validate a 2-D mask; accepts bool or exact {0, 1} integers."""
    arr = np.asarray(y)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D mask, got shape {arr.shape}")
    if arr.dtype != bool:
        vals = np.unique(arr)
        if not np.isin(vals, (0, 1)).all():
            raise ValueError(f"{name} must be binary, found values {vals[:5]}")
        arr = arr.astype(bool)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} shape {arr.shape} does not match frame shape {shape}")
    return arr
