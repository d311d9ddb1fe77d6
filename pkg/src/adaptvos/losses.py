"""Bootstrapped two-class cross-entropy with don't-care labels.

Per-pixel labels are ternary: background (0), foreground (1), or
don't-care (-1). Don't-care pixels are excluded from both the candidate
pool and the averaging denominator. Of the labeled pixels, only the
hardest fraction (largest cross-entropy) contributes to the loss, which
keeps the dominant background class from swamping the signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor

LABEL_NEGATIVE = 0
LABEL_POSITIVE = 1
LABEL_IGNORE = -1


@dataclass(frozen=True)
class LossConfig:
    hardest_fraction: float = 0.25
    loss_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.hardest_fraction <= 1.0:
            raise ValueError(f"hardest_fraction must be in (0, 1], got {self.hardest_fraction}")
        if self.loss_scale <= 0.0:
            raise ValueError(f"loss_scale must be > 0, got {self.loss_scale}")


def labels_from_mask(mask: np.ndarray) -> np.ndarray:
    """Fully supervised label map: foreground where the mask is set."""
    return np.where(mask, LABEL_POSITIVE, LABEL_NEGATIVE).astype(np.int8)


def downsample_labels(labels: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor downsampling at half-pixel centers.

    Label (i, j) of the output samples the input at
    (factor*i + factor//2, factor*j + factor//2), matching the
    half-pixel convention of the posterior upsampling.
    """
    h, w = labels.shape
    if h % factor or w % factor:
        raise ValueError(f"label map {h}x{w} not divisible by {factor}")
    off = factor // 2
    return labels[off::factor, off::factor]


def bootstrapped_ce(logits: Tensor, labels: np.ndarray, cfg: LossConfig,
                    tape: Tape | None = None) -> Tensor:
    """Mean cross-entropy over the k hardest labeled pixels, times loss_scale.

    ``logits`` is ``[1,2,h,w]`` (channel 1 = foreground), ``labels`` an
    ``[h,w]`` int map using the LABEL_* constants. k is
    ``ceil(hardest_fraction * #labeled)``; ties at the cut are broken by
    row-major pixel index. Gradient flows only through the selected
    pixels; don't-care pixels get exactly zero gradient.
    """
    if logits.data.ndim != 4 or logits.data.shape[0] != 1 or logits.data.shape[1] != 2:
        raise ValueError(f"expected logits [1,2,h,w], got shape {logits.data.shape}")
    if labels.shape != logits.data.shape[2:]:
        raise ValueError(
            f"labels shape {labels.shape} does not match logits spatial shape "
            f"{logits.data.shape[2:]}")

    z = logits.data[0]                           # [2,h,w]
    flat_labels = labels.ravel()
    labeled = np.flatnonzero(flat_labels != LABEL_IGNORE)
    if labeled.size == 0:
        raise ValueError("no training signal: all pixels are labeled don't-care")

    m = z.max(axis=0)
    e = np.exp(z - m)
    denom = e.sum(axis=0)
    log_denom = (m + np.log(denom)).ravel()      # logsumexp per pixel
    y = flat_labels[labeled]
    z_flat = z.reshape(2, -1)
    ce = log_denom[labeled] - z_flat[y, labeled]

    k = math.ceil(cfg.hardest_fraction * labeled.size)
    # descending CE, ties broken by ascending row-major index
    order = np.lexsort((labeled, -ce))
    chosen = labeled[order[:k]]
    chosen_y = flat_labels[chosen]
    out = Tensor(np.asarray(cfg.loss_scale * ce[order[:k]].mean()), logits.requires_grad)

    p = (e / denom).reshape(2, -1)               # softmax probabilities

    def backward_fn(g):
        grad = np.zeros_like(z_flat)
        coeff = float(g) * cfg.loss_scale / k
        grad[:, chosen] = p[:, chosen] * coeff
        grad[chosen_y, chosen] -= coeff
        return (grad.reshape(logits.data.shape),)

    if tape is not None and out.requires_grad:
        tape.record(out, (logits,), backward_fn)
    return out
