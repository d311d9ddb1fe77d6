"""Deterministic random streams for every randomized step of the pipeline.

All randomness is drawn from counter-based Philox4x64-10 generators
(numpy's ``np.random.Philox``, fixed algorithm and round constants). A
stream is addressed by a master seed plus a tuple of labels, e.g.
``stream(seed, "online", sequence_name, frame_index)``. The 128-bit
Philox key is derived by hashing the label tuple with BLAKE2b, so

* every draw site owns an independent stream,
* streams do not depend on program order (a stage can be re-run from a
  checkpoint, or sequences dispatched to workers, without shifting any
  other stream),
* the whole experiment is reproducible from the master seed alone.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(*parts: int | str) -> int:
    """128-bit Philox key for a label tuple (ints and strings only)."""
    for p in parts:
        if not isinstance(p, (int, str)):
            raise TypeError(f"stream labels must be int or str, got {type(p).__name__}")
    raw = "\x1f".join(f"{type(p).__name__}:{p}" for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(raw, digest_size=16).digest(), "little")


def stream(*parts: int | str) -> np.random.Generator:
    """Fresh Philox generator keyed by the label tuple."""
    return np.random.Generator(np.random.Philox(key=derive_key(*parts)))
