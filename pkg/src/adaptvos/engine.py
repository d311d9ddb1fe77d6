"""Pipeline stages and the per-frame online adaptation loop.

Stage order: objectness pretraining -> domain pretraining -> one-shot
fine-tuning on the first annotated frame -> per-frame online updates.
The online loop selects confident foreground pixels as positive
examples and pixels far from the (eroded) previous mask as negative
examples, interleaves current-frame updates with first-frame rehearsal,
removes hard negatives from the output mask, and suspends updates while
the eroded mask is empty (object lost).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import masks as maskops
from . import rng
from .autodiff import Tape, backward
from .datasets import VideoSequence, apply_augment, augment, sample_augment, zoom_image
from .losses import (
    LABEL_IGNORE,
    LABEL_NEGATIVE,
    LABEL_POSITIVE,
    LossConfig,
    bootstrapped_ce,
    downsample_labels,
    labels_from_mask,
)
from .network import (
    DOWNSAMPLE_FACTOR,
    NetworkState,
    forward_logits,
    image_to_tensor,
    posterior_map,
)
from .optim import adam_step

logger = logging.getLogger(__name__)

# distance threshold of 220 px at 854x480, expressed relative to the
# image diagonal so smaller benchmarks get a proportionate value
DEFAULT_D_REL = 220.0 / math.hypot(854.0, 480.0)


@dataclass(frozen=True)
class AdaptationConfig:
    """Hyperparameters of one-shot fine-tuning and the online loop."""

    alpha: float = 0.97              # positive-example posterior threshold
    beta: float = 0.05               # current-frame loss scale
    d_rel: float = DEFAULT_D_REL     # negative-example distance / image diagonal
    n_online: int = 15               # total update steps per frame
    n_curr: int = 3                  # of which on the current frame
    online_lr: float = 1e-5
    oneshot_steps: int = 50
    oneshot_lr: float = 3e-6
    erosion_size: int = 15
    hardest_fraction: float = 0.25
    # ablation switches (all on for the full method)
    use_positives: bool = True
    use_negatives: bool = True
    mix_first_frame: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.beta <= 0.0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not 0 <= self.n_curr <= self.n_online:
            raise ValueError(
                f"need 0 <= n_curr <= n_online, got n_curr={self.n_curr}, "
                f"n_online={self.n_online}")
        if self.d_rel < 0:
            raise ValueError(f"d_rel must be >= 0, got {self.d_rel}")
        if self.erosion_size < 1 or self.erosion_size % 2 == 0:
            raise ValueError(f"erosion_size must be odd and >= 1, got {self.erosion_size}")

    def distance_threshold(self, height: int, width: int) -> float:
        return self.d_rel * math.hypot(height, width)


@dataclass
class FrameTrace:
    """Per-frame intermediates, captured only when tracing is requested."""

    eroded: np.ndarray
    negatives: np.ndarray | None
    positives: np.ndarray | None
    labels: np.ndarray | None
    output: np.ndarray


@dataclass
class SequenceResult:
    name: str
    masks: list[np.ndarray]          # frames 2..T (frame 1 output is the ground truth)
    ious: list[float]                # vs ground truth where available, else nan
    update_counter: list[int]        # adam steps applied per frame 2..T
    lost_frames: list[int]           # frame indices (1-based) with empty eroded mask
    traces: list[FrameTrace] | None = field(default=None, repr=False)

    def mean_iou(self) -> float:
        vals = [v for v in self.ious if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")


# ---------------------------------------------------------------------------
# Shared training step

def _train_step(net: NetworkState, frame: np.ndarray, labels: np.ndarray,
                loss_cfg: LossConfig, lr: float) -> bool:
    """One gradient step on a full-resolution frame/label pair.

    Labels are nearest-neighbor downsampled to the logit resolution.
    Returns False (and applies nothing) when no labeled pixel survives
    downsampling.
    """
    small = downsample_labels(labels, DOWNSAMPLE_FACTOR)
    if not np.any(small != LABEL_IGNORE):
        return False
    tape = Tape()
    logits = forward_logits(net, image_to_tensor(frame), tape)
    loss = bootstrapped_ce(logits, small, loss_cfg, tape)
    backward(tape, loss)
    grads = {name: p.grad for name, p in net.parameters.items() if p.grad is not None}
    for p in net.parameters.values():
        p.grad = None
    adam_step(net, grads, lr)
    return True


# ---------------------------------------------------------------------------
# Pretraining stages

def pretrain_objectness(net: NetworkState, images, masks, epochs: int = 10,
                        lr: float = 1e-3, hardest_fraction: float = 0.25,
                        seed: int = 0) -> NetworkState:
    """Fine-tune on an objectness dataset (every shape is foreground).

    Shuffled per epoch, batch size one, train-time augmentations
    resampled per step. Works on a copy; the input state is untouched.
    """
    if len(images) == 0:
        raise ValueError("objectness dataset is empty")
    net = net.clone()
    cfg = LossConfig(hardest_fraction=hardest_fraction)
    for epoch in range(epochs):
        order = rng.stream(seed, "pretrain-objectness", "shuffle", epoch).permutation(len(images))
        for j, idx in enumerate(order):
            gen = rng.stream(seed, "pretrain-objectness", "augment", epoch, j)
            img, mask = augment(images[idx], masks[idx], gen)
            _train_step(net, img, labels_from_mask(mask), cfg, lr)
    return net


def pretrain_domain(net: NetworkState, sequences: list[VideoSequence], epochs: int = 10,
                    lr: float = 1e-3, hardest_fraction: float = 0.25,
                    seed: int = 0) -> NetworkState:
    """Fine-tune on all annotated frames of the training sequences."""
    pairs = [(seq.frames[i], seq.gt_masks[i])
             for seq in sequences for i in range(len(seq))
             if seq.gt_masks[i] is not None]
    if not pairs:
        raise ValueError("no annotated frames in the training sequences")
    net = net.clone()
    cfg = LossConfig(hardest_fraction=hardest_fraction)
    for epoch in range(epochs):
        order = rng.stream(seed, "pretrain-domain", "shuffle", epoch).permutation(len(pairs))
        for j, idx in enumerate(order):
            gen = rng.stream(seed, "pretrain-domain", "augment", epoch, j)
            img, mask = augment(*pairs[idx], gen)
            _train_step(net, img, labels_from_mask(mask), cfg, lr)
    return net


def one_shot_finetune(net: NetworkState, frame1: np.ndarray, gt1: np.ndarray,
                      cfg: AdaptationConfig, seed: int = 0) -> NetworkState:
    """Fine-tune on the first annotated frame (augmentations resampled per step)."""
    if gt1.shape != frame1.shape[:2]:
        raise ValueError(f"mask shape {gt1.shape} does not match frame "
                         f"{frame1.shape[:2]}")
    net = net.clone()
    loss_cfg = LossConfig(hardest_fraction=cfg.hardest_fraction)
    for step in range(cfg.oneshot_steps):
        gen = rng.stream(seed, "oneshot", step)
        img, mask = augment(frame1, gt1, gen)
        _train_step(net, img, labels_from_mask(mask), loss_cfg, cfg.oneshot_lr)
    return net


# ---------------------------------------------------------------------------
# Online adaptation

def _labels_from_selection(positives: np.ndarray, negatives: np.ndarray,
                           cfg: AdaptationConfig) -> np.ndarray:
    labels = np.full(positives.shape, LABEL_IGNORE, dtype=np.int8)
    if cfg.use_negatives:
        labels[negatives] = LABEL_NEGATIVE
    if cfg.use_positives:
        labels[positives] = LABEL_POSITIVE
    return labels


def _select_targets(fg_prob: np.ndarray, eroded: np.ndarray, cfg: AdaptationConfig):
    """Training-example selection from an already-eroded previous mask."""
    h, w = fg_prob.shape
    dt = maskops.distance_transform(eroded)
    negatives = maskops.select_negatives(dt, cfg.distance_threshold(h, w))
    positives = maskops.select_positives(fg_prob, cfg.alpha, negatives)
    return _labels_from_selection(positives, negatives, cfg), negatives, positives


def build_targets(fg_prob: np.ndarray, lastmask: np.ndarray, cfg: AdaptationConfig):
    """Label map and negatives for one frame: erode the previous mask,
    take far pixels as negatives, confident pixels (minus negatives) as
    positives; everything else is don't-care."""
    eroded = maskops.erode(lastmask, cfg.erosion_size)
    labels, negatives, _ = _select_targets(fg_prob, eroded, cfg)
    return labels, negatives


def _current_step_schedule(n_online: int, n_curr: int) -> list[bool]:
    """Deterministic interleave: with the defaults (15, 3), steps 5, 10
    and 15 are current-frame steps; generally every ``n_online//n_curr``-th
    step until n_curr are placed."""
    if n_curr == 0:
        return [False] * n_online
    stride = n_online // n_curr
    return [(i % stride == 0 and i // stride <= n_curr) for i in range(1, n_online + 1)]


def adapt_on_frame(net: NetworkState, frame_t: np.ndarray, frame1: np.ndarray,
                   gt1: np.ndarray, labels: np.ndarray, cfg: AdaptationConfig,
                   seed: int = 0, stream_tag: int | str = 0) -> int:
    """Interleaved online updates for one frame (in place).

    Current-frame steps train on ``labels`` at loss scale beta without
    augmentation (targets are pixel-aligned); first-frame steps train on
    the ground truth of frame 1 at scale 1.0 with fresh augmentations.
    With ``mix_first_frame`` disabled, every step is a current-frame
    step. Returns the number of Adam steps applied.
    """
    if not np.any(labels != LABEL_IGNORE):
        logger.warning("adapt_on_frame: no labeled pixels, skipping updates")
        return 0
    curr_cfg = LossConfig(hardest_fraction=cfg.hardest_fraction, loss_scale=cfg.beta)
    first_cfg = LossConfig(hardest_fraction=cfg.hardest_fraction, loss_scale=1.0)
    schedule = (_current_step_schedule(cfg.n_online, cfg.n_curr)
                if cfg.mix_first_frame else [True] * cfg.n_online)
    applied = 0
    for i, is_current in enumerate(schedule):
        if is_current:
            applied += int(_train_step(net, frame_t, labels, curr_cfg, cfg.online_lr))
        else:
            gen = rng.stream(seed, "online-aug", stream_tag, i)
            img, mask = augment(frame1, gt1, gen)
            applied += int(_train_step(net, img, labels_from_mask(mask), first_cfg,
                                       cfg.online_lr))
    return applied


def run_sequence(net: NetworkState, sequence: VideoSequence, cfg: AdaptationConfig,
                 adapt: bool = True, seed: int = 0, tta: bool = False,
                 tta_variants: int = 10, tta_for_targets: bool = False,
                 forward_fn=None, collect_traces: bool = False) -> SequenceResult:
    """Per-frame loop over frames 2..T, starting from the frame-1 ground truth.

    With ``adapt`` the previous output mask is eroded each frame; if
    nothing remains the object counts as lost and no updates happen.
    Otherwise training targets are selected from the pre-update
    posteriors, the network is updated, and the output mask is the
    post-update posteriors thresholded at 0.5 minus the hard negatives.
    With ``adapt=False`` this is the un-adapted baseline: a plain 0.5
    threshold per frame, the network is never touched.

    The caller's ``net`` is never mutated (the loop works on a clone).
    ``forward_fn(net, frame, frame_index)`` may be injected for testing;
    it must return the foreground-probability map.
    """
    if len(sequence) < 2:
        raise ValueError(f"{sequence.name}: need at least 2 frames")
    gt1 = sequence.gt_masks[0]
    if gt1 is None:
        raise ValueError(f"{sequence.name}: ground truth for frame 1 is required")
    frame1 = sequence.frames[0]

    if forward_fn is None:
        def forward_fn(n, frame, t, _seed=seed):
            if tta:
                return tta_forward(n, frame, n_variants=tta_variants,
                                   seed=rng.derive_key(_seed, "tta", t) % (2 ** 63))[1]
            return posterior_map(n, frame)[1]

    net = net.clone()
    lastmask = gt1.copy()
    out_masks: list[np.ndarray] = []
    ious: list[float] = []
    update_counter: list[int] = []
    lost_frames: list[int] = []
    traces: list[FrameTrace] | None = [] if collect_traces else None

    for t in range(1, len(sequence)):
        frame = sequence.frames[t]
        negatives = None
        positives = None
        labels = None
        eroded = None
        steps = 0
        if not adapt:
            fg = forward_fn(net, frame, t)
            output = maskops.threshold_minus_negatives(fg)
        else:
            eroded = maskops.erode(lastmask, cfg.erosion_size)
            if not eroded.any():
                # object lost: no updates, raw threshold so it can be re-found
                lost_frames.append(t + 1)
                fg = forward_fn(net, frame, t)
                output = maskops.threshold_minus_negatives(fg)
            else:
                fg = forward_fn(net, frame, t)  # pre-update posteriors (targets)
                labels, negatives, positives = _select_targets(fg, eroded, cfg)
                steps = adapt_on_frame(net, frame, frame1, gt1, labels, cfg,
                                       seed=seed, stream_tag=t)
                fg = forward_fn(net, frame, t)  # post-update posteriors (output)
                output = maskops.threshold_minus_negatives(fg, negatives)
        lastmask = output
        out_masks.append(output)
        gt = sequence.gt_masks[t]
        ious.append(maskops.iou(output, gt) if gt is not None else float("nan"))
        update_counter.append(steps)
        if traces is not None:
            traces.append(FrameTrace(eroded=eroded, negatives=negatives,
                                     positives=positives, labels=labels, output=output))

    return SequenceResult(name=sequence.name, masks=out_masks, ious=ious,
                          update_counter=update_counter, lost_frames=lost_frames,
                          traces=traces)


def tta_forward(net: NetworkState, frame: np.ndarray, n_variants: int = 10,
                seed: int = 0) -> np.ndarray:
    """Posteriors averaged over augmented variants of the frame.

    Variant 0 is the identity; the rest sample flip/zoom/gamma and are
    inverse-warped back to the original geometry before averaging.
    Returns a ``[2,H,W]`` map whose channels still sum to one.
    """
    if n_variants < 1:
        raise ValueError(f"need at least one variant, got {n_variants}")
    acc = posterior_map(net, frame)
    gen = rng.stream(seed, "tta-params")
    for _ in range(n_variants - 1):
        params = sample_augment(gen)
        warped, _ = apply_augment(frame, None, params)
        post = posterior_map(net, warped)
        if params.scale != 1.0:
            post = np.stack([zoom_image(c[:, :, None], 1.0 / params.scale)[:, :, 0]
                             for c in post])
        if params.flip:
            post = post[:, :, ::-1]
        acc = acc + post
    return acc / n_variants
