"""Command-line entry points: train one fold run, export attention maps."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .attention import export_attention_maps
from .config import ARCHITECTURES, LOSS_KINDS, OPTIMIZERS, PATCH_SIZES, ModelConfig, TrainConfig
from .data import find_run, read_fold_plan
from .errors import ConfigInvalid, TrainerError
from .models import build_model
from .train import load_checkpoint, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plaque-trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one fold run from a patch manifest")
    p_train.add_argument("--manifest", required=True, type=Path)
    p_train.add_argument("--fold-plan", required=True, type=Path)
    p_train.add_argument("--run", required=True, dest="run_name")
    p_train.add_argument("--out", required=True, type=Path)
    p_train.add_argument("--arch", default="unet", choices=ARCHITECTURES)
    p_train.add_argument("--patch-size", default=128, type=int, choices=PATCH_SIZES)
    p_train.add_argument("--base-channels", default=64, type=int)
    p_train.add_argument("--dropout", default=0.5, type=float)
    p_train.add_argument("--loss", default="bce_dice", choices=LOSS_KINDS)
    p_train.add_argument("--bce-weight", default=0.5, type=float)
    p_train.add_argument("--optimizer", default="adadelta", choices=OPTIMIZERS)
    p_train.add_argument("--lr", default=1.0, type=float)
    p_train.add_argument("--rho", default=0.9, type=float)
    p_train.add_argument("--batch-size", default=4, type=int)
    p_train.add_argument("--max-epochs", default=200, type=int)
    p_train.add_argument("--patience", default=15, type=int)
    p_train.add_argument("--seed", default=0, type=int)

    p_export = sub.add_parser("export-attention", help="write attention heat maps for one patch")
    p_export.add_argument("--checkpoint", required=True, type=Path)
    p_export.add_argument("--image", required=True, type=Path)
    p_export.add_argument("--mask", type=Path)
    p_export.add_argument("--out", required=True, type=Path)
    p_export.add_argument("--tag", default="iter0")
    return parser


def _cmd_train(args: argparse.Namespace) -> int:
    import torch

    model_cfg = ModelConfig(
        arch=args.arch,
        patch_size=args.patch_size,
        base_channels=args.base_channels,
        dropout_p=args.dropout,
    )
    train_cfg = TrainConfig(
        loss_kind=args.loss,
        bce_weight=args.bce_weight,
        optimizer=args.optimizer,
        lr=args.lr,
        rho=args.rho,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        early_stopping_patience=args.patience,
        seed=args.seed,
    )
    plan = read_fold_plan(args.fold_plan)
    run = find_run(plan, args.run_name)
    torch.manual_seed(train_cfg.seed)
    model = build_model(model_cfg)
    result = train(model, run, args.manifest, train_cfg, args.out)
    dev = result.dev_scores["dice"]
    print(
        f"trained {result.fold_name}: {result.epochs_run} epochs, "
        f"best epoch {result.best_epoch}, dev dice {dev:.4f}"
    )
    print(f"checkpoint {result.checkpoint_path}")
    print(f"record    {result.record_path}")
    return EXIT_OK


def _cmd_export(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    image = np.asarray(Image.open(args.image).convert("RGB"))
    mask = np.asarray(Image.open(args.mask).convert("L")) if args.mask else None
    maps = export_attention_maps(model, image, mask, args.out, args.tag)
    print(f"wrote {len(maps)} attention maps to {args.out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            return _cmd_train(args)
        return _cmd_export(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
