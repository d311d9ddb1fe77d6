"""Benchmark measures over predicted mask sequences.

Region quality J is per-frame intersection-over-union, summarized as
mean, recall (fraction of frames above 0.5) and decay (first-quartile
mean minus last-quartile mean). Contour quality F is the harmonic mean
of boundary precision and recall under a Chebyshev pixel tolerance
(default: 1% of the image diagonal, rounded up).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .masks import check_mask, iou


def j_stats(per_frame_ious) -> tuple[float, float, float]:
    """(mean, recall, decay) of a sequence's per-frame IoU values.

    Recall counts frames with IoU strictly above 0.5. Decay compares the
    first and last ceil(T/4) frames; positive decay means quality
    degrades over the video.
    """
    vals = np.asarray(list(per_frame_ious), dtype=np.float64)
    if vals.size == 0:
        raise ValueError("j_stats needs at least one IoU value")
    q = math.ceil(vals.size / 4)
    mean = float(vals.mean())
    recall = float((vals > 0.5).mean())
    decay = float(vals[:q].mean() - vals[-q:].mean())
    return mean, recall, decay


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a background 4-neighbor (borders count as background)."""
    mask = check_mask(mask)
    padded = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return mask & ~interior


def default_boundary_tolerance(shape: tuple[int, int]) -> int:
    return math.ceil(0.01 * math.hypot(shape[0], shape[1]))


def _within_chebyshev(targets: np.ndarray, tol: int) -> np.ndarray:
    """Pixels within Chebyshev distance tol of any target pixel."""
    if tol == 0:
        return targets
    size = 2 * tol + 1
    padded = np.zeros((targets.shape[0] + 2 * tol, targets.shape[1] + 2 * tol), dtype=bool)
    padded[tol:-tol, tol:-tol] = targets
    return sliding_window_view(padded, (size, size)).any(axis=(2, 3))


def boundary_f(pred: np.ndarray, gt: np.ndarray, tol: int | None = None) -> float:
    """Boundary F-measure between two masks under tolerance ``tol``.

    Both boundaries empty -> 1.0; exactly one empty -> 0.0.
    """
    pred = check_mask(pred, "pred")
    gt = check_mask(gt, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if tol is None:
        tol = default_boundary_tolerance(pred.shape)
    if tol < 0:
        raise ValueError(f"tolerance must be >= 0, got {tol}")
    pb = boundary_pixels(pred)
    gb = boundary_pixels(gt)
    n_pred = np.count_nonzero(pb)
    n_gt = np.count_nonzero(gb)
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    precision = np.count_nonzero(pb & _within_chebyshev(gb, tol)) / n_pred
    recall = np.count_nonzero(gb & _within_chebyshev(pb, tol)) / n_gt
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class SequenceMetrics:
    name: str
    j_mean: float
    j_recall: float
    j_decay: float
    f_mean: float


@dataclass(frozen=True)
class MetricsReport:
    sequences: tuple[SequenceMetrics, ...]
    j_mean: float
    j_recall: float
    j_decay: float
    f_mean: float
    config_fingerprint: str
    seed: int


def config_fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def evaluate_run(results, gt_masks: dict[str, list[np.ndarray]],
                 fingerprint: str = "", seed: int = 0,
                 tolerance: int | None = None) -> MetricsReport:
    """Assemble a report from SequenceResults and aligned ground truth.

    ``gt_masks[name]`` lists the ground truth for frames 2..T of that
    sequence (frame 1 is the given annotation and is not scored).
    """
    rows = []
    for res in sorted(results, key=lambda r: r.name):
        if res.name not in gt_masks:
            raise ValueError(f"no ground truth for sequence {res.name!r}")
        gts = gt_masks[res.name]
        if len(gts) != len(res.masks):
            raise ValueError(
                f"sequence {res.name!r}: {len(res.masks)} predictions vs "
                f"{len(gts)} ground-truth frames")
        ious = [iou(pred, gt) for pred, gt in zip(res.masks, gts)]
        fs = [boundary_f(pred, gt, tolerance) for pred, gt in zip(res.masks, gts)]
        jm, jr, jd = j_stats(ious)
        rows.append(SequenceMetrics(res.name, jm, jr, jd, float(np.mean(fs))))
    if not rows:
        raise ValueError("no sequences to evaluate")
    return MetricsReport(
        sequences=tuple(rows),
        j_mean=float(np.mean([r.j_mean for r in rows])),
        j_recall=float(np.mean([r.j_recall for r in rows])),
        j_decay=float(np.mean([r.j_decay for r in rows])),
        f_mean=float(np.mean([r.f_mean for r in rows])),
        config_fingerprint=fingerprint,
        seed=seed,
    )


CSV_COLUMNS = ("sequence", "J_mean", "J_recall", "J_decay", "F_mean")


def report_csv(report: MetricsReport) -> str:
    """Stable CSV rendering: one row per sequence plus a MEAN row."""
    lines = [",".join(CSV_COLUMNS)]
    for r in report.sequences:
        lines.append(f"{r.name},{r.j_mean!r},{r.j_recall!r},{r.j_decay!r},{r.f_mean!r}")
    lines.append(f"MEAN,{report.j_mean!r},{report.j_recall!r},{report.j_decay!r},{report.f_mean!r}")
    lines.append(f"# config={report.config_fingerprint} seed={report.seed}")
    return "\n".join(lines) + "\n"


def report_table(report: MetricsReport) -> str:
    """Human-readable aligned table."""
    width = max([len("sequence")] + [len(r.name) for r in report.sequences])
    header = f"{'sequence':<{width}}  J_mean  J_recall  J_decay  F_mean"
    lines = [header, "-" * len(header)]
    for r in list(report.sequences) + [SequenceMetrics(
            "MEAN", report.j_mean, report.j_recall, report.j_decay, report.f_mean)]:
        lines.append(f"{r.name:<{width}}  {r.j_mean:6.3f}  {r.j_recall:8.3f}  "
                     f"{r.j_decay:7.3f}  {r.f_mean:6.3f}")
    return "\n".join(lines)
