"""Binary PGM (P5) and PPM (P6) readers/writers, maxval 255.

Masks are stored as P5 with foreground=255/background=0; frames as P6
with channels quantized to 8 bits. Writing then reading is bit-exact.
"""

from __future__ import annotations

import numpy as np


def _read_header(f, magic: bytes):
    if f.read(2) != magic:
        raise ValueError(f"expected {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ValueError("truncated header")
        body = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in body.split())
    width, height, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    return width, height


def write_mask(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write((mask.astype(np.uint8) * 255).tobytes())


def read_mask(path) -> np.ndarray:
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P5")
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    if data.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    if not np.all((data == 0) | (data == 255)):
        raise ValueError(f"{path}: not a binary mask (values other than 0/255)")
    return (data == 255).reshape(h, w)


def write_image(image: np.ndarray, path) -> None:
    """HWC float image in [0,1], quantized to 8-bit channels."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HWC RGB image, got shape {image.shape}")
    h, w = image.shape[:2]
    quant = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(quant.tobytes())


def read_image(path) -> np.ndarray:
    """HWC float image in [0,1] (multiples of 1/255)."""
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P6")
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return data.reshape(h, w, 3).astype(np.float64) / 255.0
