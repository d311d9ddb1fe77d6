"""Experiment orchestration: dataset materialization, stage execution,
checkpointing, per-sequence evaluation, ablation runner.

Every derived random stream is keyed by the master seed plus stage and
sequence labels, so a run is reproducible from its config file alone,
stages can resume from checkpoints bit-identically, and dispatching
sequences to worker processes cannot change the results.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import datasets, pnm, rng
from .config import ExperimentConfig, save_config, to_text
from .datasets import Scenario, VideoSequence
from .engine import SequenceResult, one_shot_finetune, run_sequence
from .engine import pretrain_domain as _pretrain_domain
from .engine import pretrain_objectness as _pretrain_objectness
from .metrics import MetricsReport, config_fingerprint, evaluate_run, report_csv
from .network import NetworkState, init_network, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)


class StageOrderError(RuntimeError):
    """A stage was enabled without the stage it depends on."""


@dataclass
class Dataset:
    train: list[VideoSequence]
    eval: list[VideoSequence]
    objectness_images: list
    objectness_masks: list


def _scenario_seed(master: int, *labels) -> int:
    return rng.derive_key(master, *labels) % (2 ** 31)


def make_dataset(cfg: ExperimentConfig) -> Dataset:
    """Build (or load) the train/eval splits and the objectness set."""
    d = cfg.data
    if d.kind == "directory":
        root = Path(d.root)
        train = datasets.load_split(root / "train")
        eval_seqs = datasets.load_split(root / "eval")
        images, masks = datasets.load_objectness(root / "objectness")
        return Dataset(train, eval_seqs, images, masks)

    resolution = (d.height, d.width)
    # evaluation split: the appearance-drift benchmark
    eval_seqs = []
    for i in range(d.eval_count):
        sc = Scenario("appearance_drift", frames=d.frames, resolution=resolution,
                      seed=_scenario_seed(cfg.seed, "eval", i))
        seq = datasets.generate_sequence(sc)
        eval_seqs.append(replace_name(seq, f"drift_{i:03d}"))
    # training split: alternating static / drift appearance
    train = []
    kinds = ("static_control", "appearance_drift")
    for i in range(d.train_count):
        sc = Scenario(kinds[i % 2], frames=d.frames, resolution=resolution,
                      seed=_scenario_seed(cfg.seed, "train", i))
        seq = datasets.generate_sequence(sc)
        train.append(replace_name(seq, f"train_{i:03d}"))
    images, masks = datasets.generate_objectness_dataset(
        _scenario_seed(cfg.seed, "objectness"), d.objectness_count)
    return Dataset(train, eval_seqs, images, masks)


def replace_name(seq: VideoSequence, name: str) -> VideoSequence:
    return VideoSequence(name=name, frames=seq.frames, gt_masks=seq.gt_masks,
                         distractor_masks=seq.distractor_masks)


def cmd_generate(cfg: ExperimentConfig, force: bool = False) -> Path:
    """Materialize the synthetic dataset as PPM/PGM directories."""
    root = Path(cfg.data.root) if cfg.data.root else Path(cfg.out_dir) / "dataset"
    if root.exists() and any(root.iterdir()):
        if not force:
            raise FileExistsError(f"{root} already exists; pass --force to overwrite")
    dataset = make_dataset(replace(cfg, data=replace(cfg.data, kind="synthetic")))
    for seq in dataset.train:
        datasets.export_sequence(seq, root / "train")
    for seq in dataset.eval:
        datasets.export_sequence(seq, root / "eval")
    datasets.export_objectness(dataset.objectness_images, dataset.objectness_masks,
                               root / "objectness")
    logger.info("dataset written to %s", root)
    return root


def pretrained_network(cfg: ExperimentConfig, dataset: Dataset,
                       checkpoint_dir: Path | None = None) -> NetworkState:
    """Run the enabled pretraining stages, checkpointing after each."""
    if cfg.init_checkpoint:
        net = load_checkpoint(cfg.init_checkpoint, cfg.arch)
    else:
        net = init_network(cfg.arch, cfg.seed)
    if checkpoint_dir is not None:
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(net, checkpoint_dir / "base.ckpt")
    if cfg.stages.pretrain_objectness:
        net = _pretrain_objectness(
            net, dataset.objectness_images, dataset.objectness_masks,
            epochs=cfg.train.pretrain_epochs, lr=cfg.train.pretrain_lr,
            hardest_fraction=cfg.loss.hardest_fraction, seed=cfg.seed)
        if checkpoint_dir is not None:
            save_checkpoint(net, checkpoint_dir / "objectness.ckpt")
    if cfg.stages.pretrain_domain:
        net = _pretrain_domain(
            net, dataset.train, epochs=cfg.train.pretrain_epochs,
            lr=cfg.train.pretrain_lr, hardest_fraction=cfg.loss.hardest_fraction,
            seed=cfg.seed)
        if checkpoint_dir is not None:
            save_checkpoint(net, checkpoint_dir / "domain.ckpt")
    return net


def evaluate_one_sequence(net: NetworkState, seq: VideoSequence,
                          cfg: ExperimentConfig) -> SequenceResult:
    """One-shot fine-tune (if enabled) and run the per-frame loop."""
    if cfg.stages.one_shot:
        seq_seed = rng.derive_key(cfg.seed, "sequence", seq.name) % (2 ** 63)
        net = one_shot_finetune(net, seq.frames[0], seq.gt_masks[0], cfg.adapt,
                                seed=seq_seed)
    return run_sequence(net, seq, cfg.adapt, adapt=cfg.stages.online_adapt,
                        seed=rng.derive_key(cfg.seed, "online", seq.name) % (2 ** 63),
                        tta=cfg.stages.tta, tta_variants=cfg.train.tta_variants)


def _sequence_worker(args):
    net, seq, cfg = args
    return evaluate_one_sequence(net, seq, cfg)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1,
                   write_outputs: bool = True) -> MetricsReport:
    """Execute the enabled stages in order and evaluate the eval split."""
    if cfg.stages.online_adapt and not cfg.stages.one_shot:
        raise StageOrderError(
            "online adaptation requires the one-shot stage: the loop starts "
            "from the frame-1 fine-tuned network (enable stages.one_shot)")
    out = Path(cfg.out_dir)
    ckpt_dir = out / "checkpoints" if write_outputs else None
    if write_outputs:
        out.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out / "config.cfg")

    dataset = make_dataset(cfg)
    net = pretrained_network(cfg, dataset, ckpt_dir)

    eval_seqs = sorted(dataset.eval, key=lambda s: s.name)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sequence_worker,
                                    [(net, seq, cfg) for seq in eval_seqs]))
    else:
        results = [evaluate_one_sequence(net, seq, cfg) for seq in eval_seqs]
    results.sort(key=lambda r: r.name)

    gts = {seq.name: seq.gt_masks[1:] for seq in eval_seqs}
    report = evaluate_run(results, gts, fingerprint=config_fingerprint(to_text(cfg)),
                          seed=cfg.seed)
    if write_outputs:
        for res in results:
            mask_dir = out / "masks" / res.name
            mask_dir.mkdir(parents=True, exist_ok=True)
            for i, mask in enumerate(res.masks, start=1):
                pnm.write_mask(mask, mask_dir / f"{i:05d}.pgm")
        (out / "report.csv").write_text(report_csv(report), encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# Ablations

# The published ablation rows, as config deltas.
BUILTIN_VARIANTS: dict[str, dict[str, str]] = {
    "no_adaptation": {"stages.online_adapt": "false"},
    "full_adaptation": {},
    "only_negatives": {"adapt.use_positives": "false"},
    "only_positives": {"adapt.use_negatives": "false"},
    "no_first_frame": {"adapt.mix_first_frame": "false"},
}


def ablate(cfg: ExperimentConfig, variants: list[str] | None = None,
           jobs: int = 1, write_outputs: bool = True):
    """Run named config variants on the same dataset/seed.

    Returns (rows, reports): rows are (variant, mean J) pairs in the
    requested order.
    """
    from .config import apply_override

    names = list(variants) if variants is not None else list(BUILTIN_VARIANTS)
    rows = []
    reports = {}
    if not names:  # no variants requested: report the base configuration alone
        base_cfg = replace(cfg, out_dir=str(Path(cfg.out_dir) / "base"))
        report = run_experiment(base_cfg, jobs=jobs, write_outputs=write_outputs)
        rows.append(("base", report.j_mean))
        reports["base"] = report
        return rows, reports
    for name in names:
        if name not in BUILTIN_VARIANTS:
            raise ValueError(f"unknown ablation variant {name!r}; "
                             f"known: {', '.join(BUILTIN_VARIANTS)}")
        variant_cfg = cfg
        for key, value in BUILTIN_VARIANTS[name].items():
            variant_cfg = apply_override(variant_cfg, key, value)
        variant_cfg = replace(variant_cfg, out_dir=str(Path(cfg.out_dir) / name))
        report = run_experiment(variant_cfg, jobs=jobs, write_outputs=write_outputs)
        rows.append((name, report.j_mean))
        reports[name] = report
    return rows, reports


def ablation_table(rows) -> str:
    width = max(len(name) for name, _ in rows) if rows else 8
    lines = [f"{'variant':<{width}}  mean_J", "-" * (width + 8)]
    for name, j in rows:
        lines.append(f"{name:<{width}}  {j:6.3f}")
    return "\n".join(lines)


__all__ = [
    "Dataset", "StageOrderError", "make_dataset", "cmd_generate",
    "pretrained_network", "evaluate_one_sequence", "run_experiment",
    "ablate", "ablation_table", "BUILTIN_VARIANTS",
]
