"""Command-line front end: synth-data, train, infer, evaluate.

Exit codes are stable for scripting: 0 success, 2 usage/config/validation
error, 3 numeric failure during training. The RATE_NET_DATA_ROOT environment
variable supplies a default dataset root wherever one is not given.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
import torch
from PIL import Image

from .config import RunConfig, overfit_preset
from .data import DatasetError, denormalize_image, load_dataset, load_pair
from .metrics import evaluate_directory, report_table
from .synthetic import dataset_digest, make_synthetic_dataset
from .trainer import (TrainingAborted, infer_with_state, iterations_per_cycle,
                      load_checkpoint, train)

ENV_DATA_ROOT = "RATE_NET_DATA_ROOT"


def _data_root_default() -> str:
    return os.environ.get(ENV_DATA_ROOT, "")


def cmd_synth_data(args) -> int:
    n_images = args.persons * args.poses
    if args.dry_run:
        print(f"dry run: would write {n_images} images ({args.persons} persons x "
              f"{args.poses} poses, {args.size}x{args.size}) under {args.out}")
        return 0
    before = dataset_digest(args.out) if os.path.isdir(args.out) else None
    make_synthetic_dataset(args.out, args.persons, args.poses,
                           args.size, args.size, args.seed)
    digest = dataset_digest(args.out)
    suffix = " (unchanged)" if digest == before else ""
    print(f"wrote {n_images} images under {args.out}{suffix}")
    print(f"digest {digest}")
    return 0


def _load_run_config(args) -> RunConfig:
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and isinstance(doc.get("data"), dict):
        if "root" not in doc["data"] and _data_root_default():
            doc["data"]["root"] = _data_root_default()
    config = RunConfig.from_dict(doc)
    if args.seed is not None:
        config = dataclasses.replace(
            config, cycle=dataclasses.replace(config.cycle, seed=args.seed))
    if args.ablation is not None:
        config = dataclasses.replace(
            config, cycle=dataclasses.replace(config.cycle, ablation_mode=args.ablation))
    return config


def cmd_train(args) -> int:
    config = _load_run_config(args)
    total = config.cycle.total_cycles
    if args.dry_run:
        index = load_dataset(config.data.root, "train")
        print(f"dry run: {total} cycles x {iterations_per_cycle(config)} iterations "
              f"over {len(index)} pairs ({config.cycle.ablation_mode}), "
              f"output under {args.out}")
        return 0
    path = train(config, args.out, resume=args.resume)
    print(f"final checkpoint: {path}")
    return 0


def _grid_row(tensors) -> np.ndarray:
    panes = [denormalize_image(t) for t in tensors]
    return np.concatenate(panes, axis=1)


def cmd_infer(args) -> int:
    config, state = load_checkpoint(args.checkpoint)
    root = args.data or config.data.root
    index = load_dataset(root, args.split)
    if not index.pairs:
        raise DatasetError(f"no {args.split} pairs under {root}")
    entries = index.pairs if args.all else index.pairs[:args.pairs]
    if args.dry_run:
        print(f"dry run: would render {len(entries)} grids "
              f"({4 if args.no_gt else 5} panes each) under {args.out}")
        return 0
    os.makedirs(args.out, exist_ok=True)
    written = []
    for entry in entries:
        pair = load_pair(entry, sigma=config.data.sigma)
        out = infer_with_state(state, pair.source_image, pair.source_pose,
                               pair.target_pose)
        panes = [pair.source_image, out.coarse[0],
                 torch.clamp(out.residual[0], -1.0, 1.0), out.final[0]]
        if not args.no_gt:
            panes.append(pair.target_image)
        src = os.path.splitext(os.path.basename(entry.source_image))[0]
        tgt = os.path.splitext(os.path.basename(entry.target_image))[0]
        path = os.path.join(args.out, f"{src}_to_{tgt}.png")
        Image.fromarray(_grid_row(panes)).save(path)
        written.append(path)
    for path in written:
        print(path)
    print(f"wrote {len(written)} grids under {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    if args.dry_run:
        print(f"dry run: would compare {args.pred} against {args.gt}")
        return 0
    report = evaluate_directory(args.pred, args.gt, n_splits=args.splits)
    print(report_table(report))
    report_path = args.report or os.path.join(args.pred, "metric_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"report written to {report_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratenet",
        description="Coarse-to-fine pose-guided person image synthesis.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dry-run", action="store_true",
                        help="print the plan, write nothing")

    p = sub.add_parser("synth-data", parents=[common],
                       help="generate a procedural stick-figure dataset")
    p.add_argument("--out", default=_data_root_default() or None, required=not _data_root_default())
    p.add_argument("--persons", type=int, default=4)
    p.add_argument("--poses", type=int, default=3)
    p.add_argument("--size", type=int, default=64, help="square image size")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", parents=[common], help="run the training schedule")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--seed", type=int, default=None, help="override cycle.seed")
    p.add_argument("--ablation", choices=("full", "pb_only", "pb_fixed"), default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common],
                       help="render source/coarse/residual/final grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=_data_root_default() or None)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--all", action="store_true", help="render every pair")
    p.add_argument("--no-gt", action="store_true", help="omit the ground-truth pane")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", parents=[common],
                       help="compute metrics over matching PNG directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", default=None, help="report JSON path")
    p.add_argument("--splits", type=int, default=10)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingAborted as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
