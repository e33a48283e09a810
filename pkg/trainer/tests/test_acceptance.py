"""End-to-end acceptance checks for the trainer.

Each test prints one [PASS]/[FAIL] line so the suite doubles as a report:

    pytest tests/test_acceptance.py -s
"""

import time

import numpy as np
import pytest
import torch
from torch import nn

from plaque_trainer import (
    ModelConfig,
    TrainConfig,
    bce_dice_linearity_gap,
    build_model,
    evaluate_pool,
    gradient_check,
    train,
)
from plaque_trainer.config import LOSS_KINDS
from plaque_trainer.data import PatchDataset, assign_rows, read_manifest
from plaque_trainer.losses import loss_fn

from conftest import disk_patch


def _report(criterion: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


def _train_pool_dice(model, patch_set) -> float:
    rows = read_manifest(patch_set["manifest"])
    pool = assign_rows(patch_set["run"], rows)["train"]
    dataset = PatchDataset(patch_set["root"], pool)
    _, scores = evaluate_pool(model, dataset, loss_fn("bce_dice"), batch_size=5)
    return scores["dice"]


def test_both_architectures_overfit_and_early_stopping_halts(patch_set, tmp_path):
    t0 = time.time()
    outcomes = []
    for arch in ("unet", "attention_unet"):
        torch.manual_seed(0)
        model = build_model(ModelConfig(arch=arch, patch_size=128, base_channels=8))
        cfg = TrainConfig(batch_size=5, max_epochs=60, seed=0)
        result = train(model, patch_set["run"], patch_set["manifest"], cfg, tmp_path / arch)
        dice = _train_pool_dice(model, patch_set)
        outcomes.append((arch, dice, result.epochs_run))

    torch.manual_seed(1)
    frozen = build_model(ModelConfig(patch_size=128, base_channels=4))
    for module in frozen.modules():
        if isinstance(module, nn.BatchNorm2d):
            module.momentum = 0.0  # keep running stats, and so val loss, flat
    flat_cfg = TrainConfig(lr=0.0, early_stopping_patience=3, max_epochs=50, batch_size=5, seed=0)
    flat = train(frozen, patch_set["run"], patch_set["manifest"], flat_cfg, tmp_path / "flat")

    elapsed = time.time() - t0
    overfit_ok = all(dice > 0.95 and epochs <= 200 for _, dice, epochs in outcomes)
    stop_ok = flat.epochs_run <= flat_cfg.early_stopping_patience + 1
    detail = (
        "; ".join(f"{arch} train dice {dice:.4f} in {epochs} epochs" for arch, dice, epochs in outcomes)
        + f"; flat val loss stopped after {flat.epochs_run} epochs"
        f" (patience {flat_cfg.early_stopping_patience}); {elapsed:.0f}s"
    )
    _report(
        "20-patch overfit reaches train dice 0.95 and flat validation loss halts training",
        overfit_ok and stop_ok,
        detail,
    )


def test_loss_gradients_match_finite_differences():
    reports = [gradient_check(kind, shape=(8, 8), seed=0) for kind in LOSS_KINDS]
    gt = torch.zeros(8, 8, dtype=torch.float64)
    gt[2:6, 2:6] = 1.0
    reports.append(gradient_check("dice_loss", prob=gt * 0.96 + 0.02, gt=gt))
    linearity = max(bce_dice_linearity_gap(seed=s) for s in range(3))

    worst = max(reports, key=lambda r: r.max_rel_error)
    passed = all(r.passed for r in reports) and linearity < 1e-10
    _report(
        "analytic loss gradients match central finite differences",
        passed,
        f"worst rel error {worst.max_rel_error:.2e} ({worst.kind}, tol 1e-4); "
        f"bce_dice linearity gap {linearity:.2e} (tol 1e-10)",
    )


def test_attention_gates_focus_on_annotated_region(tmp_path):
    t0 = time.time()
    rng = np.random.default_rng(1)
    image, mask = disk_patch(rng, distractor=True)
    x = torch.from_numpy(image.transpose(2, 0, 1).astype(np.float32) / 255.0)[None]
    gt = torch.from_numpy(mask.astype(np.float32))[None, None]

    torch.manual_seed(1)
    model = build_model(ModelConfig(arch="attention_unet", patch_size=128, base_channels=8))
    optimizer = torch.optim.Adam(model.parameters(), lr=3e-3)
    criterion = loss_fn("bce_dice")
    for _ in range(500):
        model.train()
        optimizer.zero_grad()
        criterion(model(x), gt).backward()
        optimizer.step()

    model.eval()
    with torch.no_grad():
        prob = model(x)
        finest = model.attention_maps()[-1][0, 0].numpy()
    pred = prob[0, 0].numpy() >= 0.5
    dice = 2.0 * (pred & (mask > 0)).sum() / (pred.sum() + mask.sum())
    inside = float(finest[mask > 0].mean())
    outside = float(finest[mask == 0].mean())
    ratio = inside / outside
    _report(
        "after one-patch overfit the finest gate activation concentrates inside the ROI",
        dice > 0.95 and ratio > 2.0,
        f"dice {dice:.4f}; inside mean {inside:.4f} vs outside {outside:.4f} "
        f"(ratio {ratio:.2f}, need > 2); {time.time() - t0:.0f}s",
    )


def test_loss_values_agree_with_toolkit():
    from plaquekit.metrics import loss_value

    rng = np.random.default_rng(0)
    fixtures = []
    for seed in range(3):
        prob = rng.uniform(0.0, 1.0, (33, 17))
        gt = (rng.uniform(size=(33, 17)) > 0.6).astype(np.float64)
        fixtures.append((prob, gt))
    saturated = rng.uniform(0.0, 1.0, (16, 16))
    saturated.flat[:8] = 0.0
    saturated.flat[-8:] = 1.0
    fixtures.append((saturated, np.zeros((16, 16))))  # empty ground truth

    worst = 0.0
    pairs = 0
    for kind in LOSS_KINDS:
        for prob, gt in fixtures:
            ours = float(loss_fn(kind)(torch.from_numpy(prob), torch.from_numpy(gt)))
            theirs = loss_value(kind, prob, gt)
            worst = max(worst, abs(ours - theirs))
            pairs += 1
    _report(
        "trainer loss values equal toolkit loss_value on shared fixtures",
        worst < 1e-6,
        f"max |difference| {worst:.2e} over {pairs} kind/fixture pairs (tol 1e-6)",
    )
