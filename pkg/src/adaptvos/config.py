"""Experiment configuration: dataclasses plus a flat ``key = value`` file
format with dotted section prefixes (diff-friendly, no dependencies).

Two profiles ship in code: ``paper`` carries the published operating
point (learning rates sized for a large pretrained backbone), ``toy``
is tuned once for the compact network and synthetic benchmark that the
acceptance suite runs.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields, replace

from .engine import AdaptationConfig
from .losses import LossConfig
from .network import ArchConfig


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"          # synthetic | directory
    root: str = ""                   # dataset directory for kind=directory
    eval_count: int = 20
    train_count: int = 10
    objectness_count: int = 60
    frames: int = 40
    height: int = 96
    width: int = 96

    def __post_init__(self):
        if self.kind not in ("synthetic", "directory"):
            raise ValueError(f"data.kind must be 'synthetic' or 'directory', got {self.kind!r}")


@dataclass(frozen=True)
class StageConfig:
    pretrain_objectness: bool = True
    pretrain_domain: bool = True
    one_shot: bool = True
    online_adapt: bool = True
    tta: bool = False


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 10
    pretrain_lr: float = 1e-3
    tta_variants: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    init_checkpoint: str = ""
    arch: ArchConfig = field(default_factory=ArchConfig)
    adapt: AdaptationConfig = field(default_factory=AdaptationConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)
    stages: StageConfig = field(default_factory=StageConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_SECTIONS = ("arch", "adapt", "loss", "data", "stages", "train")
_SCALARS = ("seed", "out_dir", "init_checkpoint")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(text: str, typ):
    origin = typing.get_origin(typ)
    if origin is tuple:
        parts = [p for p in text.split(",") if p.strip()]
        return tuple(int(p.strip()) for p in parts)
    if typ is bool:
        low = text.strip().lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return low == "true"
    if typ is int:
        return int(text.strip())
    if typ is float:
        return float(text.strip())
    if typ is str:
        return text.strip()
    raise ValueError(f"unsupported config field type {typ}")


def to_text(cfg: ExperimentConfig) -> str:
    """Render a config as flat key = value lines (round-trips losslessly)."""
    lines = []
    for name in _SCALARS:
        lines.append(f"{name} = {_format_value(getattr(cfg, name))}")
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in fields(sub):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def from_text(text: str) -> ExperimentConfig:
    """Parse the flat format; unknown keys raise."""
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        cfg = apply_override(cfg, key, value)
    return cfg


def apply_override(cfg: ExperimentConfig, key: str, value: str) -> ExperimentConfig:
    """Set one dotted key (e.g. ``adapt.alpha``) from its text value."""
    if key in _SCALARS:
        hints = typing.get_type_hints(ExperimentConfig)
        return replace(cfg, **{key: _parse_value(value, hints[key])})
    if "." in key:
        section, _, attr = key.partition(".")
        if section in _SECTIONS:
            sub = getattr(cfg, section)
            hints = typing.get_type_hints(type(sub))
            if attr not in hints:
                raise ValueError(f"unknown config key {key!r}")
            new_sub = replace(sub, **{attr: _parse_value(value, hints[attr])})
            return replace(cfg, **{section: new_sub})
    raise ValueError(f"unknown config key {key!r}")


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return from_text(f.read())


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(to_text(cfg))


def paper_profile() -> ExperimentConfig:
    """Published operating point; learning rates assume a large pretrained
    backbone and are far too small for the compact network."""
    return ExperimentConfig(out_dir="runs/paper")


def toy_profile() -> ExperimentConfig:
    """Desk-scale operating point for the compact network on the synthetic
    benchmark; tuned once and committed. The structure of the method is
    unchanged, only step sizes, loss weight and erosion size are rescaled
    for the small network and 96x96 frames."""
    return ExperimentConfig(
        out_dir="runs/toy",
        adapt=AdaptationConfig(
            alpha=0.97,
            beta=0.5,
            n_online=15,
            n_curr=3,
            online_lr=3e-4,
            oneshot_steps=50,
            oneshot_lr=1e-3,
            erosion_size=3,
            hardest_fraction=0.25,
        ),
        train=TrainConfig(pretrain_epochs=4, pretrain_lr=1e-3),
    )


PROFILES = {"paper": paper_profile, "toy": toy_profile}
