"""Differentiable segmentation losses on probability maps.

All losses take a probability map already squashed to (0, 1) and a binary
ground-truth mask of the same shape, and return a scalar tensor. Formulas
are shared with the evaluation toolkit's ``loss_value`` so that a loss
printed during training and one recomputed offline from saved maps agree.
"""

from __future__ import annotations

import torch

from .config import DEFAULT_LOSS_PARAMS, LOSS_KINDS


def bce(prob: torch.Tensor, gt: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    """Binary cross-entropy with natural logs, probabilities clamped to [eps, 1-eps]."""
    clamped = prob.clamp(eps, 1.0 - eps)
    return -(gt * clamped.log() + (1.0 - gt) * (1.0 - clamped).log()).mean()


def dice_loss(prob: torch.Tensor, gt: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    """Soft Dice loss on raw probabilities; eps keeps the empty case finite."""
    num = 2.0 * (prob * gt).sum() + eps
    den = prob.sum() + gt.sum() + eps
    return 1.0 - num / den


def bce_dice(
    prob: torch.Tensor,
    gt: torch.Tensor,
    bce_weight: float = 0.5,
    eps: float = 1e-7,
) -> torch.Tensor:
    """Convex combination of BCE and soft Dice."""
    return bce_weight * bce(prob, gt, eps) + (1.0 - bce_weight) * dice_loss(prob, gt, eps)


def focal(
    prob: torch.Tensor,
    gt: torch.Tensor,
    alpha: float = 0.25,
    gamma: float = 2.0,
    eps: float = 1e-7,
) -> torch.Tensor:
    """Focal loss; down-weights well-classified pixels by (1 - p_t)^gamma."""
    clamped = prob.clamp(eps, 1.0 - eps)
    p_t = torch.where(gt > 0, clamped, 1.0 - clamped)
    return (-alpha * (1.0 - p_t) ** gamma * p_t.log()).mean()


def loss_fn(kind: str, params: dict | None = None):
    """Return ``f(prob, gt) -> scalar tensor`` for a named loss kind."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    p = dict(DEFAULT_LOSS_PARAMS)
    if params:
        p.update(params)
    eps = p["eps"]
    if kind == "bce":
        return lambda prob, gt: bce(prob, gt, eps)
    if kind == "dice_loss":
        return lambda prob, gt: dice_loss(prob, gt, eps)
    if kind == "bce_dice":
        return lambda prob, gt: bce_dice(prob, gt, p["bce_weight"], eps)
    return lambda prob, gt: focal(prob, gt, p["focal_alpha"], p["focal_gamma"], eps)
