"""Scikit-learn style estimator wrapping the segmentation pipeline.

``fit`` performs the one-shot fine-tuning on the annotated first frame;
``predict`` segments the following frames, optionally updating the
network online as it goes. Hyperparameters mirror
:class:`~adaptvos.engine.AdaptationConfig` and are exposed flat so the
estimator composes with ``get_params``/``set_params``, ``clone`` and
grid search.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .engine import DEFAULT_D_REL, AdaptationConfig, one_shot_finetune, run_sequence
from .datasets import VideoSequence
from .masks import iou
from .network import ArchConfig, NetworkState, init_network
from . import rng
from .validation import check_binary_mask, check_frame, check_video


class VideoObjectSegmenter(BaseEstimator):
    """Segments one object through a video given its first-frame mask.

    Parameters follow the adaptation scheme: ``alpha`` (positive-example
    posterior threshold), ``beta`` (current-frame loss scale), ``d_rel``
    (negative-example distance threshold relative to the image
    diagonal), ``n_online``/``n_curr`` (update steps per frame / of
    which on the current frame), learning rates, erosion size and the
    bootstrapped-loss fraction. ``base_network`` is a pretrained
    :class:`NetworkState`; ``None`` starts from a fresh initialization
    (useful only for testing).
    """

    def __init__(self, base_network: NetworkState | None = None, alpha: float = 0.97,
                 beta: float = 0.05, d_rel: float = DEFAULT_D_REL, n_online: int = 15,
                 n_curr: int = 3, online_lr: float = 1e-5, oneshot_steps: int = 50,
                 oneshot_lr: float = 3e-6, erosion_size: int = 15,
                 hardest_fraction: float = 0.25, online_adaptation: bool = True,
                 random_state: int = 0):
        self.base_network = base_network
        self.alpha = alpha
        self.beta = beta
        self.d_rel = d_rel
        self.n_online = n_online
        self.n_curr = n_curr
        self.online_lr = online_lr
        self.oneshot_steps = oneshot_steps
        self.oneshot_lr = oneshot_lr
        self.erosion_size = erosion_size
        self.hardest_fraction = hardest_fraction
        self.online_adaptation = online_adaptation
        self.random_state = random_state

    def _config(self) -> AdaptationConfig:
        return AdaptationConfig(
            alpha=self.alpha, beta=self.beta, d_rel=self.d_rel,
            n_online=self.n_online, n_curr=self.n_curr, online_lr=self.online_lr,
            oneshot_steps=self.oneshot_steps, oneshot_lr=self.oneshot_lr,
            erosion_size=self.erosion_size, hardest_fraction=self.hardest_fraction)

    def fit(self, X, y):
        """One-shot fine-tune on the annotated first frame.

        X is one (H, W, 3) frame in [0, 1]; y its boolean object mask.
        """
        frame = check_frame(X)
        mask = check_binary_mask(y, shape=frame.shape[:2])
        cfg = self._config()
        if self.base_network is not None:
            net = self.base_network
        else:
            net = init_network(ArchConfig(), self.random_state)
        self.network_ = one_shot_finetune(
            net, frame, mask, cfg,
            seed=rng.derive_key(self.random_state, "estimator-oneshot") % (2 ** 63))
        self.first_frame_ = frame
        self.first_mask_ = mask
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("fit the estimator with the annotated first frame first")

    def predict(self, X) -> np.ndarray:
        """Segment frames following the fitted first frame.

        X is a (T, H, W, 3) stack; returns (T, H, W) boolean masks.
        With ``online_adaptation`` the network adapts frame by frame
        (self.network_ itself is not modified).
        """
        self._check_fitted()
        frames = check_video(X)
        if frames.shape[1:3] != self.first_frame_.shape[:2]:
            raise ValueError(f"frame size {frames.shape[1:3]} does not match the "
                             f"fitted first frame {self.first_frame_.shape[:2]}")
        seq = VideoSequence(
            name="predict",
            frames=[self.first_frame_] + [frames[i] for i in range(frames.shape[0])],
            gt_masks=[self.first_mask_] + [None] * frames.shape[0])
        result = run_sequence(
            self.network_, seq, self._config(), adapt=self.online_adaptation,
            seed=rng.derive_key(self.random_state, "estimator-online") % (2 ** 63))
        return np.stack(result.masks)

    def score(self, X, y) -> float:
        """Mean IoU of ``predict(X)`` against ground-truth masks ``y``."""
        preds = self.predict(X)
        truths = np.asarray(y)
        if truths.shape != preds.shape:
            raise ValueError(f"y shape {truths.shape} does not match predictions "
                             f"{preds.shape}")
        return float(np.mean([iou(p, check_binary_mask(t, name="y[t]"))
                              for p, t in zip(preds, truths)]))
