"""Attention-map export for qualitative inspection.

Runs one forward pass, pulls the gate activations (coarsest to finest),
min-max normalizes each to [0, 1], and upsamples them to the patch size.
With an output directory the maps are written as grayscale PNGs next to
the input patch and, when given, the ground-truth mask, so one tag forms
a complete visual panel per training iteration.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import NotAttentionModel
from .models import SegmentationUNet


def _to_batch(image: np.ndarray | torch.Tensor) -> torch.Tensor:
    if isinstance(image, torch.Tensor):
        tensor = image.float()
        if tensor.dim() == 3:
            tensor = tensor.unsqueeze(0)
        return tensor
    array = np.asarray(image)
    if array.ndim != 3 or array.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 image, got shape {array.shape}")
    return torch.from_numpy(array.astype(np.float32).transpose(2, 0, 1) / 255.0).unsqueeze(0)


def export_attention_maps(
    model: SegmentationUNet,
    image: np.ndarray | torch.Tensor,
    mask: np.ndarray | None = None,
    out_dir: Path | None = None,
    iteration_tag: str = "iter0",
) -> list[np.ndarray]:
    """Return per-gate heat maps in [0, 1] at patch size; optionally write PNGs."""
    if not getattr(model, "is_attention", False):
        raise NotAttentionModel("attention maps require an attention_unet model")
    batch = _to_batch(image)
    height, width = batch.shape[-2:]
    model.eval()
    with torch.no_grad():
        model(batch)
        raw_maps = model.attention_maps()

    maps = []
    for raw in raw_maps:
        upsampled = F.interpolate(raw, size=(height, width), mode="bilinear", align_corners=False)
        grid = upsampled[0, 0].numpy().astype(np.float64)
        span = grid.max() - grid.min()
        maps.append((grid - grid.min()) / span if span > 0 else np.zeros_like(grid))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for k, grid in enumerate(maps):
            heat = Image.fromarray(np.round(grid * 255).astype(np.uint8), mode="L")
            heat.save(out_dir / f"{iteration_tag}_gate{k:02d}.png")
        rgb = np.round(batch[0].numpy().transpose(1, 2, 0) * 255).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(out_dir / f"{iteration_tag}_input.png")
        if mask is not None:
            gt = (np.asarray(mask) > 0).astype(np.uint8) * 255
            Image.fromarray(gt, mode="L").save(out_dir / f"{iteration_tag}_ground_truth.png")
    return maps
