"""Video object segmentation with one-shot fine-tuning and online adaptation.

The public surface:

* :class:`VideoObjectSegmenter` -- sklearn-style estimator (fit on the
  annotated first frame, predict masks for the rest of the video)
* :mod:`adaptvos.engine` -- pipeline stages and the per-frame loop
* :mod:`adaptvos.experiment` -- reproducible experiment harness
* ``adaptvos`` CLI -- generate / run / ablate / eval / inspect-checkpoint
"""

from .engine import AdaptationConfig, SequenceResult, run_sequence
from .estimator import VideoObjectSegmenter
from .losses import LossConfig
from .network import ArchConfig, NetworkState, init_network, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AdaptationConfig",
    "ArchConfig",
    "LossConfig",
    "NetworkState",
    "SequenceResult",
    "VideoObjectSegmenter",
    "init_network",
    "load_checkpoint",
    "run_sequence",
    "save_checkpoint",
    "__version__",
]
