"""Reverse-mode automatic differentiation over dense float64 tensors.

Deliberately small: only the operations a fully-convolutional two-class
segmentation network needs (strided/dilated 2-D convolution, bilinear
upsampling, pointwise activations, two-class softmax, sum reduction).
Forward ops append records to an explicit :class:`Tape`; :func:`backward`
replays the tape once in reverse order, summing gradients for tensors
that are used more than once.

Everything is float64. Forward results are deterministic for identical
inputs: reductions run in a fixed order, and scatter accumulation uses
``np.bincount`` (sequential). Set ``CHECK_FINITE = True`` (tests do) to
assert after every op that no NaN/Inf was produced; it is off by default
because the check costs more than small forward passes do.
"""

from __future__ import annotations

import numpy as np

# Flipped on in the test suite; per-op isfinite scans are too slow for
# the inner training loop.
CHECK_FINITE = False


class Tensor:
    """Dense float64 array plus gradient bookkeeping.

    ``grad`` is populated (replaced, not accumulated) by :func:`backward`
    for every tensor with ``requires_grad`` that the loss depends on.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed ops, replayed once in reverse.

    Each entry is ``(out, inputs, backward_fn)`` where ``backward_fn``
    maps the gradient at ``out`` to a tuple of gradients aligned with
    ``inputs`` (``None`` for inputs that need no gradient). A tensor and
    the tape it is recorded on belong to one logical thread; distinct
    tapes may be used concurrently.
    """

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self.ops.append((out, inputs, backward_fn))

    def __len__(self) -> int:
        return len(self.ops)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of recorded tensors.

    ``loss`` must be a scalar produced on ``tape``. Gradients of tensors
    used multiple times are summed. The tape is consumed (cleared), and
    ``.grad`` of every reached tensor with ``requires_grad`` is replaced.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if not any(out is loss for out, _, _ in tape.ops):
        raise ValueError("loss is not an output recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for out, inputs, backward_fn in reversed(tape.ops):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue  # op output does not influence the loss
        for tensor, g in zip(inputs, backward_fn(g_out)):
            if g is None:
                continue
            acc = grads.get(id(tensor))
            grads[id(tensor)] = g if acc is None else acc + g
        if out.requires_grad:
            out.grad = g_out
    for _, inputs, _ in tape.ops:
        for tensor in inputs:
            if tensor.requires_grad and id(tensor) in grads:
                tensor.grad = grads[id(tensor)]
    tape.ops.clear()


def _finalize(tape: Tape | None, out: Tensor, inputs: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"{op} produced non-finite values")
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# Convolution

# im2col gather indices keyed by geometry; value = (flat_idx, padded shape,
# output shape). Entries are pure functions of the key, so concurrent
# re-computation is harmless.
_COL_CACHE: dict[tuple, tuple] = {}


def _conv_geometry(C, H, W, kh, kw, stride, dilation):
    key = (C, H, W, kh, kw, stride, dilation)
    hit = _COL_CACHE.get(key)
    if hit is not None:
        return hit
    eff_h = (kh - 1) * dilation + 1
    eff_w = (kw - 1) * dilation + 1
    out_h = -(-H // stride)  # ceil
    out_w = -(-W // stride)
    pad_h = max((out_h - 1) * stride + eff_h - H, 0)
    pad_w = max((out_w - 1) * stride + eff_w - W, 0)
    top, left = pad_h // 2, pad_w // 2
    ph, pw = H + pad_h, W + pad_w
    # flat indices into a padded [C, ph, pw] volume for every
    # (channel, tap, output position), laid out [C*kh*kw, out_h*out_w]
    py = stride * np.arange(out_h)[:, None] + dilation * np.arange(kh)[None, :]  # [out_h, kh]
    px = stride * np.arange(out_w)[:, None] + dilation * np.arange(kw)[None, :]  # [out_w, kw]
    c = np.arange(C)
    idx = (
        c[:, None, None, None, None] * (ph * pw)
        + py.T[None, :, None, :, None] * pw
        + px.T[None, None, :, None, :]
    )  # [C, kh, kw, out_h, out_w]
    flat = np.ascontiguousarray(idx.reshape(C * kh * kw, out_h * out_w))
    result = (flat, (top, left, ph, pw), (out_h, out_w))
    _COL_CACHE[key] = result
    return result


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           dilation: int = 1, tape: Tape | None = None) -> Tensor:
    """2-D cross-correlation with odd kernels, zero padding, stride, dilation.

    Padding is chosen so the output is exactly ``ceil(H/stride)`` by
    ``ceil(W/stride)``; for stride 1 this preserves the spatial size.
    Shapes: x ``[N,C,H,W]``, kernel ``[K,C,kh,kw]``, bias ``[K]``.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d input must be [N,C,H,W], got shape {x.data.shape}")
    if kernel.data.ndim != 4:
        raise ValueError(f"conv2d kernel must be [K,C,kh,kw], got shape {kernel.data.shape}")
    N, C, H, W = x.data.shape
    K, Ck, kh, kw = kernel.data.shape
    if Ck != C:
        raise ValueError(
            f"conv2d channel mismatch: input has {C} channels, kernel expects {Ck} "
            f"(input {x.data.shape}, kernel {kernel.data.shape})")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel sides must be odd, got {kh}x{kw}")
    if bias.data.shape != (K,):
        raise ValueError(
            f"conv2d bias must have shape ({K},) to match {K} output channels, "
            f"got {bias.data.shape}")
    if stride < 1 or dilation < 1:
        raise ValueError(f"conv2d stride and dilation must be >= 1, got {stride}, {dilation}")

    flat, (top, left, ph, pw), (out_h, out_w) = _conv_geometry(C, H, W, kh, kw, stride, dilation)
    padded = np.zeros((N, C, ph, pw))
    padded[:, :, top:top + H, left:left + W] = x.data
    col = padded.reshape(N, C * ph * pw)[:, flat]          # [N, C*kh*kw, out_h*out_w]
    w2 = kernel.data.reshape(K, C * kh * kw)
    out_data = (w2 @ col + bias.data[:, None]).reshape(N, K, out_h, out_w)
    out = Tensor(out_data, x.requires_grad or kernel.requires_grad or bias.requires_grad)

    def backward_fn(g):
        g2 = g.reshape(N, K, out_h * out_w)
        gx = None
        if x.requires_grad:
            gcol = np.matmul(w2.T, g2)                     # [N, C*kh*kw, out_h*out_w]
            gp = np.empty((N, C, ph, pw))
            for n in range(N):  # bincount scatter: sequential, deterministic
                gp[n] = np.bincount(
                    flat.ravel(), weights=gcol[n].ravel(), minlength=C * ph * pw
                ).reshape(C, ph, pw)
            gx = gp[:, :, top:top + H, left:left + W]
        gw = None
        if kernel.requires_grad:
            gw = np.matmul(g2, col.transpose(0, 2, 1)).sum(axis=0).reshape(K, C, kh, kw)
        gb = g2.sum(axis=(0, 2)) if bias.requires_grad else None
        return gx, gw, gb

    return _finalize(tape, out, (x, kernel, bias), backward_fn, "conv2d")


# ---------------------------------------------------------------------------
# Bilinear upsampling

# Per-axis interpolation matrices keyed by (size, factor).
_UPSAMPLE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _upsample_matrix(size: int, factor: int) -> np.ndarray:
    key = (size, factor)
    hit = _UPSAMPLE_CACHE.get(key)
    if hit is not None:
        return hit
    # Half-pixel centers (align_corners = False), edge values clamped.
    src = (np.arange(size * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, size - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, size - 1)
    w1 = src - i0
    w0 = 1.0 - w1
    mat = np.zeros((size * factor, size))
    rows = np.arange(size * factor)
    np.add.at(mat, (rows, i0), w0)
    np.add.at(mat, (rows, i1), w1)
    _UPSAMPLE_CACHE[key] = mat
    return mat


def bilinear_upsample(x: Tensor, factor: int, tape: Tape | None = None) -> Tensor:
    """Bilinear upsampling by an integer factor (half-pixel convention)."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if x.data.ndim != 4:
        raise ValueError(f"bilinear_upsample input must be [N,C,H,W], got {x.data.shape}")
    N, C, H, W = x.data.shape
    ah = _upsample_matrix(H, factor)
    aw = _upsample_matrix(W, factor)
    flat = x.data.reshape(N * C, H, W)
    out_data = np.matmul(np.matmul(ah, flat), aw.T).reshape(N, C, H * factor, W * factor)
    out = Tensor(out_data, x.requires_grad)

    def backward_fn(g):
        g2 = g.reshape(N * C, H * factor, W * factor)
        gx = np.matmul(np.matmul(ah.T, g2), aw).reshape(N, C, H, W)
        return (gx,)

    return _finalize(tape, out, (x,), backward_fn, "bilinear_upsample")


# ---------------------------------------------------------------------------
# Pointwise ops

def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), x.requires_grad)

    def backward_fn(g):
        return (g * (x.data > 0),)  # subgradient at 0 is 0

    return _finalize(tape, out, (x,), backward_fn, "relu")


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, x.requires_grad)

    def backward_fn(g):
        return (g * s * (1.0 - s),)

    return _finalize(tape, out, (x,), backward_fn, "sigmoid")


def scale(x: Tensor, factor: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data * factor, x.requires_grad)

    def backward_fn(g):
        return (g * factor,)

    return _finalize(tape, out, (x,), backward_fn, "scale")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(x: Tensor, y: Tensor, tape: Tape | None = None) -> Tensor:
    try:
        out_data = x.data + y.data
    except ValueError as exc:
        raise ValueError(f"add: incompatible shapes {x.data.shape} and {y.data.shape}") from exc
    out = Tensor(out_data, x.requires_grad or y.requires_grad)

    def backward_fn(g):
        gx = _unbroadcast(g, x.data.shape) if x.requires_grad else None
        gy = _unbroadcast(g, y.data.shape) if y.requires_grad else None
        return gx, gy

    return _finalize(tape, out, (x, y), backward_fn, "add")


def softmax2(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Channel-wise softmax for two-channel maps ``[N,2,h,w]``."""
    if x.data.ndim != 4 or x.data.shape[1] != 2:
        raise ValueError(f"softmax2 expects [N,2,h,w], got shape {x.data.shape}")
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, x.requires_grad)

    def backward_fn(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return _finalize(tape, out, (x,), backward_fn, "softmax2")


def reduce_sum(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    out = Tensor(x.data.sum(), x.requires_grad)

    def backward_fn(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _finalize(tape, out, (x,), backward_fn, "reduce_sum")
