"""Compact fully-convolutional two-class segmentation network.

Structure: three stride-2 3x3 convolutions (one per stage, total
downsampling factor 8), a dilated 3x3 stage, an optional residual block
at the second dilation rate, and a 1x1 head producing two-class logits
at 1/8 resolution. Inference applies the two-class softmax and
bilinearly upsamples the posteriors back to input resolution; training
consumes the low-resolution logits directly.

A :class:`NetworkState` bundles parameters, Adam moment estimates and
the step counter, and round-trips bit-exactly through the checkpoint
format documented at :func:`save_checkpoint`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .autodiff import Tape, Tensor, add, bilinear_upsample, conv2d, relu, softmax2

DOWNSAMPLE_FACTOR = 8  # three stride-2 stages

CHECKPOINT_MAGIC = b"ONAV"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    """Channel widths of the three stride-2 stages plus the dilated stage,
    the two dilation rates, and whether the dilated stage ends in a
    residual block."""

    widths: tuple[int, int, int, int] = (16, 24, 32, 48)
    dilations: tuple[int, int] = (2, 4)
    use_residual_block: bool = True
    in_channels: int = 3

    def __post_init__(self):
        if len(self.widths) != 4 or any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be four positive ints, got {self.widths}")
        if len(self.dilations) != 2 or any(d < 1 for d in self.dilations):
            raise ValueError(f"dilations must be two ints >= 1, got {self.dilations}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")


# Parameter names of the output head, re-initialized by replace_output_head.
HEAD_PARAMS = ("head.weight", "head.bias")


def parameter_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape, in construction order."""
    w0, w1, w2, w3 = arch.widths
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout, k):
        shapes[f"{name}.weight"] = (cout, cin, k, k)
        shapes[f"{name}.bias"] = (cout,)

    conv("conv1", arch.in_channels, w0, 3)
    conv("conv2", w0, w1, 3)
    conv("conv3", w1, w2, 3)
    conv("dilated1", w2, w3, 3)
    if arch.use_residual_block:
        conv("res_a", w3, w3, 3)
        conv("res_b", w3, w3, 3)
    else:
        conv("dilated2", w3, w3, 3)
    conv("head", w3, 2, 1)
    return shapes


@dataclass
class NetworkState:
    """Parameters, Adam moments and step counter: the checkpointable unit.

    The architecture travels alongside (it is config, not learned state)
    so a loaded state can run ``forward`` directly.
    """

    arch: ArchConfig
    parameters: dict[str, Tensor]
    adam_m: dict[str, np.ndarray] = field(repr=False)
    adam_v: dict[str, np.ndarray] = field(repr=False)
    step_count: int = 0
    rng_seed: int = 0

    def clone(self) -> "NetworkState":
        return NetworkState(
            arch=self.arch,
            parameters={k: Tensor(v.data.copy(), requires_grad=True)
                        for k, v in self.parameters.items()},
            adam_m={k: v.copy() for k, v in self.adam_m.items()},
            adam_v={k: v.copy() for k, v in self.adam_v.items()},
            step_count=self.step_count,
            rng_seed=self.rng_seed,
        )

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters.values())


def _init_std(shape: tuple[int, ...]) -> float:
    """Fan-in-scaled Gaussian std (He). A fixed small std collapses the
    forward signal over this depth and leaves the net untrainable."""
    fan_in = 1
    for dim in shape[1:]:
        fan_in *= dim
    return float(np.sqrt(2.0 / fan_in))


def init_network(arch: ArchConfig, seed: int) -> NetworkState:
    """Deterministic init: fan-in-scaled Gaussian weights, zero biases."""
    gen = rng.stream(seed, "network-init")
    params: dict[str, Tensor] = {}
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(arch).items():
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            data = gen.normal(0.0, _init_std(shape), size=shape)
        params[name] = Tensor(data, requires_grad=True)
        adam_m[name] = np.zeros(shape)
        adam_v[name] = np.zeros(shape)
    return NetworkState(arch=arch, parameters=params, adam_m=adam_m, adam_v=adam_v,
                        step_count=0, rng_seed=seed)


def replace_output_head(net: NetworkState, seed: int) -> NetworkState:
    """Copy of ``net`` with the 1x1 output head re-initialized.

    All other parameters and their Adam moments are preserved bit-exactly;
    the head's moments are zeroed.
    """
    out = net.clone()
    gen = rng.stream(seed, "head-init")
    for name in HEAD_PARAMS:
        shape = out.parameters[name].data.shape
        if name.endswith(".bias"):
            out.parameters[name] = Tensor(np.zeros(shape), requires_grad=True)
        else:
            out.parameters[name] = Tensor(gen.normal(0.0, _init_std(shape), size=shape),
                                          requires_grad=True)
        out.adam_m[name] = np.zeros(shape)
        out.adam_v[name] = np.zeros(shape)
    return out


def forward_logits(net: NetworkState, image: Tensor, tape: Tape | None = None) -> Tensor:
    """Two-class logits at 1/8 resolution for an image ``[1,C,H,W]``.

    H and W must be multiples of 8 (see :func:`pad_image` for arbitrary
    sizes). Records on ``tape`` when given.
    """
    if image.data.ndim != 4:
        raise ValueError(f"expected image [N,C,H,W], got shape {image.data.shape}")
    _, c, h, w = image.data.shape
    if c != net.arch.in_channels:
        raise ValueError(f"expected {net.arch.in_channels} input channels, got {c}")
    if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
        raise ValueError(
            f"input size {h}x{w} is not a multiple of {DOWNSAMPLE_FACTOR}; "
            "reflect-pad first (pad_image)")

    p = net.parameters
    d1, d2 = net.arch.dilations

    def block(x, name, stride=1, dilation=1):
        return conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"],
                      stride=stride, dilation=dilation, tape=tape)

    x = relu(block(image, "conv1", stride=2), tape)
    x = relu(block(x, "conv2", stride=2), tape)
    x = relu(block(x, "conv3", stride=2), tape)
    x = relu(block(x, "dilated1", dilation=d1), tape)
    if net.arch.use_residual_block:
        h_ = relu(block(x, "res_a", dilation=d2), tape)
        h_ = block(h_, "res_b", dilation=d2)
        x = relu(add(x, h_, tape), tape)
    else:
        x = relu(block(x, "dilated2", dilation=d2), tape)
    return block(x, "head")


def forward(net: NetworkState, image: Tensor, tape: Tape | None = None) -> Tensor:
    """Pixelwise class posteriors ``[1,2,H,W]`` at input resolution.

    Softmax over the two logit channels, then bilinear x8 upsampling of
    the posterior probabilities. Channel 1 is the foreground probability.
    """
    logits = forward_logits(net, image, tape)
    post = softmax2(logits, tape)
    return bilinear_upsample(post, DOWNSAMPLE_FACTOR, tape)


def image_to_tensor(frame: np.ndarray) -> Tensor:
    """HWC float image in [0,1] -> network input tensor [1,C,H,W]."""
    if frame.ndim != 3:
        raise ValueError(f"expected HWC image, got shape {frame.shape}")
    return Tensor(np.ascontiguousarray(frame.transpose(2, 0, 1))[None])


def pad_image(frame: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad an HWC image (bottom/right) to the next multiple of 8.

    Returns the padded image and the original (H, W) so posterior maps
    can be cropped back.
    """
    h, w = frame.shape[:2]
    ph = (-h) % DOWNSAMPLE_FACTOR
    pw = (-w) % DOWNSAMPLE_FACTOR
    if ph or pw:
        frame = np.pad(frame, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return frame, (h, w)


def posterior_map(net: NetworkState, frame: np.ndarray) -> np.ndarray:
    """Foreground/background posteriors ``[2,H,W]`` for an HWC frame.

    Handles frames whose sides are not multiples of 8 by reflect-padding
    and cropping the posteriors back.
    """
    padded, (h, w) = pad_image(frame)
    post = forward(net, image_to_tensor(padded))
    return post.data[0, :, :h, :w]


# ---------------------------------------------------------------------------
# Checkpoint format
#
# All integers little-endian. Layout:
#   magic "ONAV" | u32 version
#   u64 n, then n entries        parameter tensors
#   u64 n, then n entries        Adam first moments (same order)
#   u64 n, then n entries        Adam second moments (same order)
#   u64 step_count | u64 rng_seed
# entry := u64 name_len | name utf-8 | u64 rank | u64 dims[rank] | f64 data
# Round-trips bit-exactly (float64 payloads are copied verbatim).


def _write_block(chunks: list[bytes], arrays: dict[str, np.ndarray]) -> None:
    chunks.append(struct.pack("<Q", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<Q", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ValueError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def block(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for _ in range(self.u64()):
            name = self.take(self.u64()).decode("utf-8")
            rank = self.u64()
            dims = struct.unpack(f"<{rank}Q", self.take(8 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(self.take(8 * count), dtype="<f8").reshape(dims).copy()
            out[name] = data
        return out


def checkpoint_bytes(net: NetworkState) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    _write_block(chunks, {k: v.data for k, v in net.parameters.items()})
    _write_block(chunks, net.adam_m)
    _write_block(chunks, net.adam_v)
    chunks.append(struct.pack("<Q", net.step_count))
    chunks.append(struct.pack("<Q", net.rng_seed & 0xFFFFFFFFFFFFFFFF))
    return b"".join(chunks)


def save_checkpoint(net: NetworkState, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(net))


def read_checkpoint(path) -> dict:
    """Raw checkpoint contents: params, adam_m, adam_v, step_count, rng_seed."""
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version = struct.unpack("<I", r.take(4))[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    params = r.block()
    adam_m = r.block()
    adam_v = r.block()
    step_count = r.u64()
    rng_seed = r.u64()
    return {"parameters": params, "adam_m": adam_m, "adam_v": adam_v,
            "step_count": step_count, "rng_seed": rng_seed}


def load_checkpoint(path, arch: ArchConfig) -> NetworkState:
    """Load a checkpoint and bind it to ``arch`` (validated against it)."""
    raw = read_checkpoint(path)
    expected = parameter_shapes(arch)
    got = {k: v.shape for k, v in raw["parameters"].items()}
    if got != expected:
        raise ValueError(
            f"{path}: checkpoint does not match architecture: "
            f"expected {expected}, got {got}")
    params = {k: Tensor(v, requires_grad=True) for k, v in raw["parameters"].items()}
    return NetworkState(arch=arch, parameters=params, adam_m=raw["adam_m"],
                        adam_v=raw["adam_v"], step_count=raw["step_count"],
                        rng_seed=raw["rng_seed"])
