"""Command-line interface.

Subcommands: generate (materialize the synthetic dataset), run (execute
the pipeline and report metrics), ablate (run the named variants),
eval (score existing mask directories), inspect-checkpoint.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pnm
from .config import PROFILES, ExperimentConfig, apply_override, load_config
from .engine import SequenceResult
from .experiment import ablate, ablation_table, cmd_generate, run_experiment
from .metrics import evaluate_run, report_csv, report_table
from .network import read_checkpoint

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _add_config_flags(p: _Parser):
    p.add_argument("--config", metavar="PATH", help="config file (flat key = value)")
    p.add_argument("--profile", choices=sorted(PROFILES),
                   help="built-in profile used when no --config is given (default: toy)")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   dest="overrides", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--out", metavar="DIR", help="override the output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="adaptvos",
                     description="video object segmentation with online adaptation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write the synthetic dataset as PPM/PGM")
    _add_config_flags(p)
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")

    p = sub.add_parser("run", help="run the pipeline and evaluate")
    _add_config_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel sequence workers")

    p = sub.add_parser("ablate", help="run ablation variants")
    _add_config_flags(p)
    p.add_argument("--variants", help="comma-separated variant names "
                                      "(default: the built-in set)")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("eval", help="score existing prediction masks")
    p.add_argument("--pred", required=True, metavar="DIR",
                   help="predictions: <DIR>/<sequence>/*.pgm")
    p.add_argument("--data", required=True, metavar="DIR",
                   help="dataset eval split: <DIR>/<sequence>/masks/*.pgm")
    p.add_argument("--out", metavar="DIR", help="also write report.csv here")

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint contents")
    p.add_argument("checkpoint", metavar="PATH")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = PROFILES[args.profile or "toy"]()
    for item in args.overrides:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        cfg = apply_override(cfg, key.strip(), value.strip())
    if args.seed is not None:
        cfg = apply_override(cfg, "seed", str(args.seed))
    if args.out is not None:
        cfg = apply_override(cfg, "out_dir", args.out)
    return cfg


def _cmd_eval(args) -> None:
    pred_root = Path(args.pred)
    data_root = Path(args.data)
    results = []
    gts = {}
    seq_dirs = sorted(p for p in pred_root.iterdir() if p.is_dir())
    if not seq_dirs:
        raise FileNotFoundError(f"no prediction directories under {pred_root}")
    for seq_dir in seq_dirs:
        files = sorted(seq_dir.glob("*.pgm"))
        masks = [pnm.read_mask(p) for p in files]
        gt_dir = data_root / seq_dir.name / "masks"
        gt_files = sorted(gt_dir.glob("*.pgm"))[1:]  # frame 1 is the annotation
        gts[seq_dir.name] = [pnm.read_mask(p) for p in gt_files]
        results.append(SequenceResult(name=seq_dir.name, masks=masks,
                                      ious=[], update_counter=[], lost_frames=[]))
    report = evaluate_run(results, gts)
    print(report_table(report))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report_csv(report), encoding="utf-8")


def _cmd_inspect(args) -> None:
    raw = read_checkpoint(args.checkpoint)
    total = 0
    print(f"{'parameter':<18} shape")
    for name, arr in raw["parameters"].items():
        print(f"{name:<18} {arr.shape}")
        total += arr.size
    print(f"parameters: {total}")
    print(f"step_count: {raw['step_count']}")
    print(f"rng_seed:   {raw['rng_seed']}")
    moments_ok = all(np.isfinite(v).all() for v in raw["adam_m"].values())
    print(f"adam moments finite: {moments_ok}")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else USAGE_ERROR
    try:
        if args.command == "generate":
            root = cmd_generate(_config_from_args(args), force=args.force)
            print(f"dataset written to {root}")
        elif args.command == "run":
            report = run_experiment(_config_from_args(args), jobs=args.jobs)
            print(report_table(report))
        elif args.command == "ablate":
            variants = args.variants.split(",") if args.variants else None
            rows, _ = ablate(_config_from_args(args), variants, jobs=args.jobs)
            print(ablation_table(rows))
        elif args.command == "eval":
            _cmd_eval(args)
        elif args.command == "inspect-checkpoint":
            _cmd_inspect(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"adaptvos: error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
