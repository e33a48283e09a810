"""Finite-difference verification of the loss gradients.

Checks the autograd gradient of each loss with respect to the probability
map against central finite differences in float64. Failures come back as
report entries rather than exceptions so a sweep over all kinds always
completes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import LOSS_KINDS
from .losses import bce, dice_loss, loss_fn


@dataclass(frozen=True)
class GradientCheckReport:
    kind: str
    max_rel_error: float
    tolerance: float
    passed: bool


def _fixture(shape: tuple[int, int], seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    generator = torch.Generator().manual_seed(seed)
    # keep probabilities away from the clamp edges so the loss is smooth
    prob = 0.05 + 0.9 * torch.rand(shape, generator=generator, dtype=torch.float64)
    gt = (torch.rand(shape, generator=generator, dtype=torch.float64) > 0.5).double()
    return prob, gt


def gradient_check(
    kind: str,
    shape: tuple[int, int] = (8, 8),
    seed: int = 0,
    step: float = 1e-6,
    tolerance: float = 1e-4,
    params: dict | None = None,
    prob: torch.Tensor | None = None,
    gt: torch.Tensor | None = None,
) -> GradientCheckReport:
    """Compare the analytic gradient of one loss kind against central differences."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    if prob is None or gt is None:
        prob, gt = _fixture(shape, seed)
    prob = prob.double().clone()
    gt = gt.double()
    criterion = loss_fn(kind, params)

    leaf = prob.clone().requires_grad_(True)
    criterion(leaf, gt).backward()
    analytic = leaf.grad.clone()

    flat = prob.flatten()
    numeric = torch.empty_like(flat)
    for i in range(flat.numel()):
        bumped = flat.clone()
        bumped[i] = flat[i] + step
        upper = float(criterion(bumped.view(prob.shape), gt))
        bumped[i] = flat[i] - step
        lower = float(criterion(bumped.view(prob.shape), gt))
        numeric[i] = (upper - lower) / (2.0 * step)
    numeric = numeric.view(prob.shape)

    rel = (analytic - numeric).abs() / numeric.abs().clamp_min(1e-8)
    max_rel = float(rel.max())
    return GradientCheckReport(kind, max_rel, tolerance, max_rel < tolerance)


def bce_dice_linearity_gap(
    shape: tuple[int, int] = (8, 8), seed: int = 0, weight: float = 0.5, eps: float = 1e-7
) -> float:
    """Max |grad(bce_dice) - w*grad(bce) - (1-w)*grad(dice)| on a random fixture."""
    prob, gt = _fixture(shape, seed)
    grads = []
    for part in ("bce", "dice_loss", "bce_dice"):
        leaf = prob.clone().requires_grad_(True)
        if part == "bce":
            bce(leaf, gt, eps).backward()
        elif part == "dice_loss":
            dice_loss(leaf, gt, eps).backward()
        else:
            loss_fn("bce_dice", {"bce_weight": weight, "eps": eps})(leaf, gt).backward()
        grads.append(leaf.grad.clone())
    combined = weight * grads[0] + (1.0 - weight) * grads[1]
    return float((grads[2] - combined).abs().max())
