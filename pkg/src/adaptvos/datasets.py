"""Deterministic synthetic video benchmark and training-time augmentations.

Sequences are textured moving shapes over a textured background with
pixel-exact ground-truth masks. Object and background share the same
mottled texture statistics and differ mainly in hue, so segmenting by
appearance is learnable but a frozen model is vulnerable to the
scenario's appearance changes. Scenario kinds:

* ``appearance_drift``   the object's hue morphs into the color of a
                         static background patch (and the shape slowly
                         grows): a model frozen on frame 1 reads the
                         late object as background, while naive
                         self-training is baited into swallowing the
                         patch once the colors meet

* ``distractor_entry``   a second object-like shape enters far from the
                         target halfway through
* ``occlusion``          a background-textured bar sweeps over the target,
                         hiding it completely for several frames
* ``static_control``     appearance stays fixed (sanity baseline)

Everything is a pure function of the scenario seed. Frames are
quantized to the 8-bit grid at creation so in-memory data and data
round-tripped through PPM files are identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pnm, rng

SCENARIO_KINDS = ("appearance_drift", "distractor_entry", "occlusion", "static_control")


@dataclass(frozen=True)
class Scenario:
    kind: str
    frames: int = 40
    resolution: tuple[int, int] = (96, 96)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {SCENARIO_KINDS}")
        if self.frames < 2:
            raise ValueError(f"a sequence needs at least 2 frames, got {self.frames}")
        if min(self.resolution) < 32:
            raise ValueError(f"resolution must be at least 32x32, got {self.resolution}")


@dataclass
class VideoSequence:
    name: str
    frames: list[np.ndarray]                       # HWC float64 in [0,1]
    gt_masks: list[np.ndarray]                     # HW bool
    distractor_masks: list[np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.frames) != len(self.gt_masks):
            raise ValueError(f"{self.name}: {len(self.frames)} frames vs "
                             f"{len(self.gt_masks)} masks")
        shapes = {f.shape[:2] for f in self.frames} | {m.shape for m in self.gt_masks}
        if len(shapes) > 1:
            raise ValueError(f"{self.name}: inconsistent frame shapes {shapes}")

    def __len__(self) -> int:
        return len(self.frames)


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _mottle(h: int, w: int, gen: np.random.Generator, contrast: float,
            yy=None, xx=None) -> np.ndarray:
    """Smooth sinusoidal mottling pattern in [-contrast, contrast]."""
    if yy is None:
        yy, xx = np.mgrid[0:h, 0:w]
    pattern = np.zeros((h, w))
    for _ in range(3):
        fy, fx = gen.uniform(1.0, 4.0, size=2)
        phase = gen.uniform(0.0, 2 * np.pi)
        pattern += np.sin(2 * np.pi * (fy * yy / h + fx * xx / w) + phase)
    return pattern * (contrast / 3.0)


# Hue palette shared by scenarios and the objectness set: saturated,
# pairwise well-separated base colors.
PALETTE = np.array([
    [0.85, 0.25, 0.20],   # red
    [0.20, 0.65, 0.85],   # cyan-blue
    [0.85, 0.75, 0.20],   # yellow
    [0.55, 0.25, 0.80],   # purple
    [0.25, 0.75, 0.35],   # green
    [0.90, 0.50, 0.15],   # orange
])


def _ellipse_mask(h, w, cy, cx, ry, rx, theta) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - cy
    dx = xx - cx
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / rx
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / ry
    return u * u + v * v <= 1.0


class _ObjectTrack:
    """Rigid textured ellipse with a per-frame center, size and color."""

    def __init__(self, gen, h, w, radius):
        self.h, self.w = h, w
        self.radius = radius
        self.aspect = gen.uniform(0.8, 1.2)
        self.theta = gen.uniform(0.0, np.pi)
        # texture in object coordinates so it moves rigidly with the shape
        self.tex_freq = gen.uniform(2.0, 5.0, size=2)
        self.tex_phase = gen.uniform(0.0, 2 * np.pi)
        self.tex_contrast = 0.08

    def mask(self, cy, cx, scale=1.0):
        ry = self.radius * self.aspect * scale
        rx = self.radius / self.aspect * scale
        return _ellipse_mask(self.h, self.w, cy, cx, ry, rx, self.theta)

    def paint(self, img, mask, cy, cx, color):
        yy, xx = np.nonzero(mask)
        fy, fx = self.tex_freq
        tex = np.sin(2 * np.pi * (fy * (yy - cy) / self.h + fx * (xx - cx) / self.w)
                     + self.tex_phase) * self.tex_contrast
        img[yy, xx, :] = np.clip(color[None, :] + tex[:, None], 0.0, 1.0)


def _smooth_path(gen, T, h, w, box):
    """Center coordinates wandering smoothly inside a fractional box."""
    y0, y1, x0, x1 = box
    ay, ax = gen.uniform(0.25, 0.5, size=2)
    wy, wx = gen.uniform(0.5, 1.5, size=2)
    py, px = gen.uniform(0.0, 2 * np.pi, size=2)
    t = np.arange(T) / max(T - 1, 1)
    cy = h * ((y0 + y1) / 2 + (y1 - y0) * ay * np.sin(2 * np.pi * wy * t + py))
    cx = w * ((x0 + x1) / 2 + (x1 - x0) * ax * np.sin(2 * np.pi * wx * t + px))
    return cy, cx


def _pick_colors(gen, n):
    idx = gen.permutation(len(PALETTE))[:n]
    jitter = gen.uniform(-0.04, 0.04, size=(n, 3))
    return np.clip(PALETTE[idx] + jitter, 0.0, 1.0)


def generate_sequence(sc: Scenario) -> VideoSequence:
    """Render a scenario into frames plus pixel-exact ground truth."""
    h, w = sc.resolution
    T = sc.frames
    gen = rng.stream(sc.seed, "scenario", sc.kind)
    yy, xx = np.mgrid[0:h, 0:w]

    obj_color, bg_color, alt_color = _pick_colors(gen, 3)
    bg_color = bg_color * 0.35 + 0.32          # desaturate the background
    background = np.clip(
        bg_color[None, None, :] + _mottle(h, w, gen, 0.07, yy, xx)[:, :, None], 0, 1)

    radius = gen.uniform(0.16, 0.20) * min(h, w)
    obj = _ObjectTrack(gen, h, w, radius)
    margin_y = (0.24, 0.72)
    margin_x = (0.24, 0.72)
    if sc.kind == "distractor_entry":
        margin_x = (0.2, 0.36)                  # keep the target left
    cy, cx = _smooth_path(gen, T, h, w, (*margin_y, *margin_x))

    frames: list[np.ndarray] = []
    gt: list[np.ndarray] = []
    distractor_masks: list[np.ndarray] | None = None

    if sc.kind == "appearance_drift":
        # static camouflage patch near the center of the object's orbit;
        # the object's color converges on it over the sequence
        trap = _ObjectTrack(gen, h, w, radius * gen.uniform(0.75, 0.95))
        trap_cy = h * gen.uniform(0.42, 0.58)
        trap_cx = w * gen.uniform(0.42, 0.58)
        trap_mask = trap.mask(trap_cy, trap_cx)
        background = background.copy()
        trap.paint(background, trap_mask, trap_cy, trap_cx, alt_color)

    if sc.kind == "distractor_entry":
        distractor_masks = []
        distractor = _ObjectTrack(gen, h, w, radius * gen.uniform(0.9, 1.1))
        entry = T // 2
        dy = gen.uniform(0.3, 0.66) * h
        dx_final = gen.uniform(0.78, 0.84) * w

    if sc.kind == "occlusion":
        occ_start, occ_end = T // 3, T // 3 + 12          # bar sweep window
        full_cover = range(occ_start + 4, occ_start + 8)  # >= 4 fully hidden frames
        bar_hw = obj.radius * 1.45 + 6.0                  # half-width

    for t in range(T):
        u = t / (T - 1)
        frame = background.copy()
        scale = 1.0
        color = obj_color
        if sc.kind == "appearance_drift":
            color = (1 - u) * obj_color + u * alt_color
            scale = 1.0 + 0.15 * u
        mask = obj.mask(cy[t], cx[t], scale)
        obj.paint(frame, mask, cy[t], cx[t], color)
        visible = mask

        if sc.kind == "distractor_entry" and t >= entry:
            # slides in from the right edge, then hovers far from the target
            glide = min(1.0, (t - entry) / 4.0)
            dcx = (1 - glide) * (w + distractor.radius) + glide * dx_final
            dmask = distractor.mask(dy, dcx)
            distractor.paint(frame, dmask, dy, dcx, alt_color)
            distractor_masks.append(dmask)
        elif sc.kind == "distractor_entry":
            distractor_masks.append(np.zeros((h, w), dtype=bool))

        if sc.kind == "occlusion":
            if t in full_cover:
                bar_cx = cx[t]
            elif occ_start <= t <= occ_end:
                # approach/leave the object linearly within the window
                lo, hi = min(full_cover), max(full_cover)
                if t < lo:
                    f = (t - occ_start) / max(lo - occ_start, 1)
                    bar_cx = (1 - f) * (-bar_hw - 2) + f * cx[lo]
                else:
                    f = (t - hi) / max(occ_end - hi, 1)
                    bar_cx = (1 - f) * cx[hi] + f * (w + bar_hw + 2)
            else:
                bar_cx = None
            if bar_cx is not None:
                bar = np.abs(xx - bar_cx) <= bar_hw
                bar_tex = _mottle(h, w, rng.stream(sc.seed, "occluder"), 0.07, yy, xx)
                frame[bar] = np.clip(bg_color[None, :] * 0.97
                                     + bar_tex[bar, None], 0, 1)
                visible = mask & ~bar

        noise = gen.normal(0.0, 0.012, size=(h, w, 1))
        frames.append(_quantize(frame + noise))
        gt.append(visible)

    name = f"{sc.kind}_{sc.seed:06d}"
    return VideoSequence(name=name, frames=frames, gt_masks=gt,
                         distractor_masks=distractor_masks)


def generate_objectness_dataset(seed: int, count: int):
    """Multi-shape images whose union-of-shapes mask is the target.

    Several shape classes (ellipses, rectangles, rings) in palette
    colors, all mapped to foreground. Foreground fraction is kept inside
    [0.05, 0.6] by re-sampling.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    images = []
    masks = []
    for i in range(count):
        gen = rng.stream(seed, "objectness", i)
        h = w = 96
        yy, xx = np.mgrid[0:h, 0:w]
        colors = _pick_colors(gen, 4)
        bg = np.clip(colors[0][None, None, :] * 0.35 + 0.32
                     + _mottle(h, w, gen, 0.07, yy, xx)[:, :, None], 0, 1)
        for _ in range(64):  # deterministic re-sampling, bounded
            img = bg.copy()
            mask = np.zeros((h, w), dtype=bool)
            n_shapes = int(gen.integers(1, 4))
            for s in range(n_shapes):
                kind = int(gen.integers(0, 3))
                cyx = gen.uniform(0.2, 0.8, size=2) * (h, w)
                r = gen.uniform(0.10, 0.20) * h
                color = colors[1 + s % 3]
                if kind == 0:     # ellipse
                    m = _ellipse_mask(h, w, *cyx, r * gen.uniform(0.8, 1.2),
                                      r * gen.uniform(0.8, 1.2), gen.uniform(0, np.pi))
                elif kind == 1:   # rectangle
                    ry, rx = r * gen.uniform(0.7, 1.3, size=2)
                    m = (np.abs(yy - cyx[0]) <= ry) & (np.abs(xx - cyx[1]) <= rx)
                else:             # ring
                    m = (_ellipse_mask(h, w, *cyx, r, r, 0.0)
                         & ~_ellipse_mask(h, w, *cyx, r * 0.45, r * 0.45, 0.0))
                tex = _mottle(h, w, gen, 0.08, yy, xx)
                img[m] = np.clip(color[None, :] + tex[m, None], 0, 1)
                mask |= m
            frac = mask.mean()
            if 0.05 <= frac <= 0.6:
                break
        images.append(_quantize(img + gen.normal(0.0, 0.012, size=(h, w, 1))))
        masks.append(mask)
    return images, masks


# ---------------------------------------------------------------------------
# Train/test-time augmentations: horizontal flip, center zoom, gamma.

@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    scale: float = 1.0
    gamma: float = 1.0


def sample_augment(gen: np.random.Generator) -> AugmentParams:
    """Flip with p=0.5, scale ~ U[0.7, 1.3], gamma log-uniform in [0.7, 1.4]."""
    return AugmentParams(
        flip=bool(gen.uniform() < 0.5),
        scale=float(gen.uniform(0.7, 1.3)),
        gamma=float(np.exp(gen.uniform(np.log(0.7), np.log(1.4)))),
    )


def zoom_image(img: np.ndarray, s: float) -> np.ndarray:
    """Bilinear zoom about the image center; edge values clamped.

    Equivalent to scaling by ``s`` and center-cropping (s > 1) or
    center-padding with edge replication (s < 1) back to the input size.
    """
    if s == 1.0:
        return img.copy()
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys = np.clip(cy + (np.arange(h) - cy) / s, 0.0, h - 1.0)
    xs = np.clip(cx + (np.arange(w) - cx) / s, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    wy = (ys - y0)[:, None, None]
    x0 = np.floor(xs).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    wx = (xs - x0)[None, :, None]
    rows = img[y0] * (1 - wy) + img[y1] * wy
    return rows[:, x0] * (1 - wx) + rows[:, x1] * wx


def zoom_mask(mask: np.ndarray, s: float) -> np.ndarray:
    """Nearest-neighbor zoom of a mask; out-of-range samples are background."""
    if s == 1.0:
        return mask.copy()
    h, w = mask.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys = np.rint(cy + (np.arange(h) - cy) / s).astype(np.int64)
    xs = np.rint(cx + (np.arange(w) - cx) / s).astype(np.int64)
    ok_y = (ys >= 0) & (ys < h)
    ok_x = (xs >= 0) & (xs < w)
    out = np.zeros_like(mask)
    sub = mask[ys[ok_y][:, None], xs[ok_x][None, :]]
    out[np.ix_(ok_y, ok_x)] = sub
    return out


def apply_augment(image: np.ndarray, mask: np.ndarray | None, params: AugmentParams):
    """Apply flip, zoom and gamma; the mask (if given) stays aligned and binary."""
    img = image
    if params.flip:
        img = img[:, ::-1]
        mask = mask[:, ::-1] if mask is not None else None
    if params.scale != 1.0:
        img = zoom_image(img, params.scale)
        mask = zoom_mask(mask, params.scale) if mask is not None else None
    else:
        img = img.copy()
        mask = mask.copy() if mask is not None else None
    if params.gamma != 1.0:
        img = np.clip(img, 0.0, 1.0) ** params.gamma
    return img, mask


def augment(image: np.ndarray, mask: np.ndarray | None, gen: np.random.Generator):
    """Sample augmentation parameters from ``gen`` and apply them."""
    return apply_augment(image, mask, sample_augment(gen))


# ---------------------------------------------------------------------------
# Directory layout: <root>/<sequence>/frames/00000.ppm + masks/00000.pgm

def export_sequence(seq: VideoSequence, root) -> Path:
    root = Path(root)
    frames_dir = root / seq.name / "frames"
    masks_dir = root / seq.name / "masks"
    frames_dir.mkdir(parents=True, exist_ok=True)
    masks_dir.mkdir(parents=True, exist_ok=True)
    for i, (frame, mask) in enumerate(zip(seq.frames, seq.gt_masks)):
        pnm.write_image(frame, frames_dir / f"{i:05d}.ppm")
        pnm.write_mask(mask, masks_dir / f"{i:05d}.pgm")
    return root / seq.name


def load_sequence(seq_dir) -> VideoSequence:
    seq_dir = Path(seq_dir)
    frame_files = sorted((seq_dir / "frames").glob("*.ppm"))
    if not frame_files:
        raise ValueError(f"{seq_dir}: no frames found")
    frames = [pnm.read_image(p) for p in frame_files]
    masks = []
    for p in frame_files:
        mask_path = seq_dir / "masks" / (p.stem + ".pgm")
        if not mask_path.exists():
            raise ValueError(f"{seq_dir}: missing mask for frame {p.stem}")
        masks.append(pnm.read_mask(mask_path))
    return VideoSequence(name=seq_dir.name, frames=frames, gt_masks=masks)


def load_split(split_dir) -> list[VideoSequence]:
    split_dir = Path(split_dir)
    dirs = sorted(p for p in split_dir.iterdir() if p.is_dir())
    if not dirs:
        raise ValueError(f"{split_dir}: no sequences found")
    return [load_sequence(p) for p in dirs]


def export_objectness(images, masks, root) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i, (img, mask) in enumerate(zip(images, masks)):
        pnm.write_image(img, root / "images" / f"{i:05d}.ppm")
        pnm.write_mask(mask, root / "masks" / f"{i:05d}.pgm")
    return root


def load_objectness(root):
    root = Path(root)
    files = sorted((root / "images").glob("*.ppm"))
    if not files:
        raise ValueError(f"{root}: no objectness images found")
    images = [pnm.read_image(p) for p in files]
    masks = [pnm.read_mask(root / "masks" / (p.stem + ".pgm")) for p in files]
    return images, masks
