"""Binary mask algebra: erosion, exact Euclidean distance transform,
online training-example selection, and intersection-over-union.

Masks are 2-D boolean arrays (True = foreground). Posterior maps passed
to the selection helpers are 2-D float arrays of foreground
probabilities at the same resolution.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import pnm

save_mask = pnm.write_mask
load_mask = pnm.read_mask


def check_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.dtype != bool:
        raise ValueError(f"{name} must be a 2-D boolean array, got "
                         f"shape {mask.shape}, dtype {mask.dtype}")
    if mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {mask.shape}")
    return mask


def erode(mask: np.ndarray, size: int) -> np.ndarray:
    """Erosion by a size x size square; outside the image counts as background."""
    mask = check_mask(mask)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"erosion size must be odd and >= 1, got {size}")
    if size == 1:
        return mask.copy()
    r = size // 2
    padded = np.zeros((mask.shape[0] + 2 * r, mask.shape[1] + 2 * r), dtype=bool)
    padded[r:-r, r:-r] = mask
    return sliding_window_view(padded, (size, size)).all(axis=(2, 3))


def _dt_1d_squared(f: np.ndarray) -> np.ndarray:
    """1-D squared-distance transform (lower envelope of parabolas).

    Entries of ``f`` are squared distances (np.inf where no source);
    infinite entries contribute no parabola.
    """
    n = f.size
    out = np.full(n, np.inf)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = -1
    for q in range(n):
        fq = f[q]
        if not np.isfinite(fq):
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        while True:
            p = v[k]
            s = ((fq + q * q) - (f[p] + p * p)) / (2 * q - 2 * p)
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        return out
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        p = v[j]
        out[q] = (q - p) * (q - p) + f[p]
    return out


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the nearest foreground pixel.

    Two-pass lower-envelope algorithm (columns, then rows). Returns
    +inf everywhere when the mask is empty; exactly 0 on foreground.
    """
    mask = check_mask(mask)
    h, w = mask.shape
    sq = np.where(mask, 0.0, np.inf)
    for x in range(w):
        sq[:, x] = _dt_1d_squared(sq[:, x])
    for y in range(h):
        sq[y, :] = _dt_1d_squared(sq[y, :])
    return np.sqrt(sq)


def select_negatives(dt: np.ndarray, d: float) -> np.ndarray:
    """Pixels strictly farther than ``d`` from the last mask (inf included)."""
    if d < 0:
        raise ValueError(f"distance threshold must be >= 0, got {d}")
    return dt > d


def select_positives(fg_prob: np.ndarray, alpha: float, negatives: np.ndarray) -> np.ndarray:
    """Confidently-foreground pixels, minus any selected as negatives."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if fg_prob.shape != negatives.shape:
        raise ValueError(f"posterior shape {fg_prob.shape} != negatives shape {negatives.shape}")
    return (fg_prob > alpha) & ~negatives


def threshold_minus_negatives(fg_prob: np.ndarray, negatives: np.ndarray | None = None) -> np.ndarray:
    """Foreground mask ``fg_prob > 0.5`` with hard negatives removed."""
    out = fg_prob > 0.5
    if negatives is not None:
        if negatives.shape != fg_prob.shape:
            raise ValueError(
                f"negatives shape {negatives.shape} != posterior shape {fg_prob.shape}")
        out &= ~negatives
    return out


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    a = check_mask(a, "a")
    b = check_mask(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
