"""Shared synthetic patch sets written in the toolkit's interchange formats."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

MANIFEST_FIELDS = (
    "patch_id",
    "wsi_id",
    "scanner",
    "origin_x",
    "origin_y",
    "level",
    "size",
    "context_ratio",
    "augmentation_tag",
    "normalization_tag",
    "image_path",
    "mask_path",
)

BLOB_COLOR = np.array([120, 75, 50], dtype=np.float64)

RUN = {
    "name": "test_00_cv_00",
    "test": ["s0"],
    "val": ["v0"],
    "train": ["t0", "t1"],
    "augment_splits": ["train"],
}


def disk_patch(rng: np.random.Generator, size: int = 64, distractor: bool = False):
    """Light noisy background with one dark disk; optional unlabeled twin disk.

    With ``distractor`` the labeled disk sits in the left half and an
    identically colored, unlabeled twin mirrors it into the right half, so
    appearance alone cannot separate foreground from background.
    """
    image = rng.normal(225, 8, (size, size, 3)).clip(0, 255).astype(np.uint8)
    mask = np.zeros((size, size), dtype=np.uint8)
    yy, xx = np.ogrid[:size, :size]
    radius = int(rng.integers(size // 8, size // 5 + 1))
    max_cx = size // 2 - radius - 2 if distractor else size - radius - 2
    cx = int(rng.integers(radius + 2, max_cx))
    cy = int(rng.integers(radius + 2, size - radius - 2))
    disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    tint = (BLOB_COLOR + rng.normal(0, 6, (size, size, 3))).clip(0, 255).astype(np.uint8)
    image[disk] = tint[disk]
    mask[disk] = 1
    if distractor:
        twin = (xx - (size - cx)) ** 2 + (yy - (size - cy)) ** 2 <= radius * radius
        image[twin] = tint[twin]
    return image, mask


def write_patch_set(
    root: Path,
    wsi_counts: dict[str, int],
    size: int = 64,
    seed: int = 0,
    augment_tags: tuple[str, ...] = (),
) -> Path:
    """Write images/, masks/, and manifest.jsonl under ``root``; return manifest path."""
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rows = []

    def add_row(wsi: str, k: int, image, mask, tag: str):
        pid = f"{wsi}__r{k:02d}__L1_x0_y0" + ("" if tag == "none" else f"__{tag}")
        image_rel = f"images/{pid}.png"
        mask_rel = f"masks/{pid}.png"
        Image.fromarray(image, mode="RGB").save(root / image_rel)
        Image.fromarray(mask * 255, mode="L").save(root / mask_rel)
        rows.append(
            {
                "patch_id": pid,
                "wsi_id": wsi,
                "scanner": "NanoZoomer2RS",
                "origin_x": 0,
                "origin_y": 0,
                "level": 1,
                "size": size,
                "context_ratio": float(mask.sum()) / (size * size),
                "augmentation_tag": tag,
                "normalization_tag": "raw",
                "image_path": image_rel,
                "mask_path": mask_rel,
            }
        )

    for wsi in sorted(wsi_counts):
        for k in range(wsi_counts[wsi]):
            image, mask = disk_patch(rng, size)
            add_row(wsi, k, image, mask, "none")
            for tag in augment_tags:
                variant, variant_mask = disk_patch(rng, size)
                add_row(wsi, k, variant, variant_mask, tag)

    manifest = root / "manifest.jsonl"
    with manifest.open("w") as fh:
        for row in rows:
            fh.write(json.dumps({k: row[k] for k in MANIFEST_FIELDS}) + "\n")
    return manifest


def write_fold_plan(path: Path, runs: list[dict]) -> Path:
    path.write_text(json.dumps({"mode": "nested", "seed": 0, "runs": runs}, indent=2) + "\n")
    return path


@pytest.fixture(scope="session")
def patch_set(tmp_path_factory):
    """26 patches: 20 train (t0, t1), 3 val (v0), 3 test (s0), one fold run."""
    root = tmp_path_factory.mktemp("patchset")
    manifest = write_patch_set(root, {"t0": 10, "t1": 10, "v0": 3, "s0": 3}, seed=0)
    plan = write_fold_plan(root / "fold_plan.json", [RUN])
    return {"root": root, "manifest": manifest, "plan": plan, "run": dict(RUN)}


@pytest.fixture(scope="session")
def small_set(tmp_path_factory):
    """12 patches for fast driver tests."""
    root = tmp_path_factory.mktemp("smallset")
    manifest = write_patch_set(root, {"t0": 4, "t1": 4, "v0": 2, "s0": 2}, seed=7)
    plan = write_fold_plan(root / "fold_plan.json", [RUN])
    return {"root": root, "manifest": manifest, "plan": plan, "run": dict(RUN)}
