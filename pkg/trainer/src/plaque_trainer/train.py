"""Training loop: optimization, checkpointing, logging, and score emission.

One call trains one fold run. The loop optimizes the configured loss on
the train pool, tracks validation loss for LR scheduling and early
stopping, keeps the checkpoint with the best validation Dice, and finally
scores the restored checkpoint on the validation (dev) and test pools.
Scores use pooled pixel confusion counts at a fixed 0.5 threshold and are
written as a per-fold CSV table that the toolkit's ``aggregate`` command
accepts unchanged.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .config import ModelConfig, TrainConfig
from .data import PatchDataset, assign_rows, read_manifest
from .errors import DataMissing, Divergence
from .losses import loss_fn
from .models import SegmentationUNet, build_model

THRESHOLD = 0.5

SCORE_COLUMNS = (
    "dev_dice",
    "dev_f1",
    "dev_recall",
    "dev_precision",
    "test_dice",
    "test_f1",
    "test_recall",
    "test_precision",
)
STAT_ROWS = ("mean", "std", "max", "min")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_dice: float
    lr: float


@dataclass(frozen=True)
class TrainResult:
    fold_name: str
    history: tuple[EpochStats, ...]
    best_epoch: int
    epochs_run: int
    dev_scores: dict[str, float]
    test_scores: dict[str, float] | None
    checkpoint_path: Path
    log_path: Path
    record_path: Path


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return 1.0 if num == 0 else 0.0


def pooled_scores(tp: float, fp: float, fn: float) -> dict[str, float]:
    """Dice/F1/recall/precision from pooled pixel counts; empty-vs-empty scores 1."""
    dice = 1.0 if tp + fp + fn == 0 else 2.0 * tp / (2.0 * tp + fp + fn)
    return {
        "dice": dice,
        "f1": dice,
        "recall": _ratio(tp, tp + fn),
        "precision": _ratio(tp, tp + fp),
    }


def _make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = model.parameters()
    if cfg.optimizer == "adadelta":
        return torch.optim.Adadelta(params, lr=cfg.lr, rho=cfg.rho)
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(params, lr=cfg.lr)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr)
    return torch.optim.RMSprop(params, lr=cfg.lr)


def _batches(n: int, batch_size: int, generator: torch.Generator | None):
    order = torch.randperm(n, generator=generator) if generator is not None else torch.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


@torch.no_grad()
def evaluate_pool(model: nn.Module, dataset: PatchDataset, criterion, batch_size: int):
    """Mean loss and pooled scores of a pool, in eval mode."""
    model.eval()
    total_loss = 0.0
    tp = fp = fn = 0.0
    for idx in _batches(len(dataset), batch_size, None):
        images, masks = dataset.batch(idx)
        probs = model(images)
        total_loss += float(criterion(probs, masks)) * len(idx)
        pred = probs >= THRESHOLD
        gt = masks > 0
        tp += float((pred & gt).sum())
        fp += float((pred & ~gt).sum())
        fn += float((~pred & gt).sum())
    return total_loss / len(dataset), pooled_scores(tp, fp, fn)


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def write_record_table(
    path: Path, fold_name: str, dev: dict[str, float], test: dict[str, float] | None
) -> None:
    """Write a one-fold score table with trailing mean/std/max/min rows."""
    names = ("dice", "f1", "recall", "precision")
    values = [dev[n] for n in names] + ([test[n] for n in names] if test else [])
    columns = SCORE_COLUMNS if test else SCORE_COLUMNS[:4]
    lines = ["fold_name," + ",".join(columns)]
    lines.append(",".join([fold_name] + [_fmt(v) for v in values]))
    for stat in STAT_ROWS:
        stat_values = [0.0 if stat == "std" else v for v in values]
        lines.append(",".join([stat] + [_fmt(v) for v in stat_values]))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_epoch_log(path: Path, history: list[EpochStats]) -> None:
    lines = ["epoch,train_loss,val_loss,val_dice,lr"]
    for h in history:
        lines.append(f"{h.epoch},{h.train_loss:.6f},{h.val_loss:.6f},{h.val_dice:.4f},{h.lr:g}")
    Path(path).write_text("\n".join(lines) + "\n")


def train(
    model: SegmentationUNet,
    run: dict,
    manifest_path: Path,
    cfg: TrainConfig,
    out_dir: Path,
) -> TrainResult:
    """Train ``model`` on one fold run and write checkpoint, log, and scores.

    ``run`` is one entry of a fold-plan document; ``manifest_path`` points
    at the patch manifest whose image/mask paths are resolved relative to
    its directory. Raises DataMissing when the train or validation pool is
    empty and Divergence when the validation loss turns non-finite.
    """
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = read_manifest(manifest_path)
    pools = assign_rows(run, rows)
    if not pools["train"]:
        raise DataMissing(f"run {run['name']!r}: train split has no patches")
    if not pools["val"]:
        raise DataMissing(f"run {run['name']!r}: validation split has no patches")
    train_set = PatchDataset(manifest_path.parent, pools["train"])
    val_set = PatchDataset(manifest_path.parent, pools["val"])
    test_set = PatchDataset(manifest_path.parent, pools["test"]) if pools["test"] else None

    torch.manual_seed(cfg.seed)
    shuffler = torch.Generator().manual_seed(cfg.seed)
    criterion = loss_fn(cfg.loss_kind, cfg.loss_params())
    optimizer = _make_optimizer(model, cfg)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=cfg.plateau_factor, patience=cfg.plateau_patience
    )

    history: list[EpochStats] = []
    best_val_loss = math.inf
    best_dice = -1.0
    best_epoch = -1
    best_state: dict | None = None
    stale = 0
    for epoch in range(cfg.max_epochs):
        model.train()
        running = 0.0
        for idx in _batches(len(train_set), cfg.batch_size, shuffler):
            images, masks = train_set.batch(idx)
            optimizer.zero_grad()
            loss = criterion(model(images), masks)
            loss.backward()
            optimizer.step()
            running += float(loss.detach()) * len(idx)
        train_loss = running / len(train_set)
        val_loss, val_scores = evaluate_pool(model, val_set, criterion, cfg.batch_size)
        if not math.isfinite(val_loss):
            raise Divergence(f"validation loss {val_loss} at epoch {epoch}")
        scheduler.step(val_loss)
        history.append(
            EpochStats(epoch, train_loss, val_loss, val_scores["dice"], optimizer.param_groups[0]["lr"])
        )
        if val_scores["dice"] > best_dice:
            best_dice = val_scores["dice"]
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        if val_loss < best_val_loss:
            best_val_loss = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stopping_patience:
                break

    model.load_state_dict(best_state)
    checkpoint_path = out_dir / "checkpoint.pt"
    torch.save(
        {
            "state_dict": model.state_dict(),
            "model_config": {
                "arch": model.config.arch,
                "patch_size": model.config.patch_size,
                "base_channels": model.config.base_channels,
                "dropout_p": model.config.dropout_p,
            },
            "fold_name": run["name"],
            "best_epoch": best_epoch,
        },
        checkpoint_path,
    )
    log_path = out_dir / "epochs.csv"
    _write_epoch_log(log_path, history)

    _, dev_scores = evaluate_pool(model, val_set, criterion, cfg.batch_size)
    test_scores = None
    if test_set is not None:
        _, test_scores = evaluate_pool(model, test_set, criterion, cfg.batch_size)
    record_path = out_dir / "record.csv"
    write_record_table(record_path, run["name"], dev_scores, test_scores)
    return TrainResult(
        fold_name=run["name"],
        history=tuple(history),
        best_epoch=best_epoch,
        epochs_run=len(history),
        dev_scores=dev_scores,
        test_scores=test_scores,
        checkpoint_path=checkpoint_path,
        log_path=log_path,
        record_path=record_path,
    )


def load_checkpoint(path: Path) -> SegmentationUNet:
    """Rebuild the model stored at ``path`` and load its weights."""
    path = Path(path)
    if not path.is_file():
        raise DataMissing(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = build_model(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    return model
