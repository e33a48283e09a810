"""Readers for the patch-set interchange files.

The trainer consumes the toolkit's on-disk formats directly: a JSONL
manifest whose rows carry ``wsi_id``, ``augmentation_tag``, and image/mask
paths relative to the manifest's directory; PNG patches (RGB) and masks
(single channel, zero or 255); and a fold-plan JSON listing runs with
``test``/``val``/``train`` WSI groups plus the splits that may keep
augmented rows.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import DataMissing

SPLITS = ("train", "val", "test")


def read_manifest(path: Path) -> list[dict]:
    """Load manifest rows from a JSONL file."""
    path = Path(path)
    if not path.is_file():
        raise DataMissing(f"manifest not found: {path}")
    rows = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    if not rows:
        raise DataMissing(f"manifest is empty: {path}")
    return rows


def read_fold_plan(path: Path) -> dict:
    """Load a fold-plan JSON document."""
    path = Path(path)
    if not path.is_file():
        raise DataMissing(f"fold plan not found: {path}")
    doc = json.loads(path.read_text())
    if "runs" not in doc or not doc["runs"]:
        raise DataMissing(f"fold plan has no runs: {path}")
    return doc


def find_run(plan: dict, name: str) -> dict:
    for run in plan["runs"]:
        if run["name"] == name:
            return run
    known = ", ".join(r["name"] for r in plan["runs"])
    raise DataMissing(f"run {name!r} not in fold plan (runs: {known})")


def assign_rows(run: dict, rows: list[dict]) -> dict[str, list[dict]]:
    """Split manifest rows into train/val/test pools for one run.

    Augmented rows are kept only in the splits named by the run's
    ``augment_splits``; evaluation pools therefore stay unaugmented.
    """
    groups = {"train": set(run["train"]), "val": set(run["val"]), "test": set(run["test"])}
    augment_splits = set(run.get("augment_splits", ["train"]))
    pools: dict[str, list[dict]] = {split: [] for split in SPLITS}
    for row in rows:
        for split in SPLITS:
            if row["wsi_id"] in groups[split]:
                if row.get("augmentation_tag", "none") == "none" or split in augment_splits:
                    pools[split].append(row)
                break
    return pools


def load_pair(manifest_dir: Path, row: dict) -> tuple[torch.Tensor, torch.Tensor]:
    """Load one patch as (image CHW float [0,1], mask 1HW float {0,1})."""
    manifest_dir = Path(manifest_dir)
    image_path = manifest_dir / row["image_path"]
    mask_path = manifest_dir / row["mask_path"]
    for p in (image_path, mask_path):
        if not p.is_file():
            raise DataMissing(f"patch file not found: {p}")
    image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float32) / 255.0
    mask = (np.asarray(Image.open(mask_path).convert("L")) > 0).astype(np.float32)
    return (
        torch.from_numpy(image.transpose(2, 0, 1).copy()),
        torch.from_numpy(mask[None, :, :].copy()),
    )


class PatchDataset:
    """In-memory dataset over a pool of manifest rows."""

    def __init__(self, manifest_dir: Path, rows: list[dict]):
        self.manifest_dir = Path(manifest_dir)
        self.rows = list(rows)
        self._cache: list[tuple[torch.Tensor, torch.Tensor] | None] = [None] * len(rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, index: int) -> tuple[torch.Tensor, torch.Tensor]:
        if self._cache[index] is None:
            self._cache[index] = load_pair(self.manifest_dir, self.rows[index])
        return self._cache[index]

    def batch(self, indices) -> tuple[torch.Tensor, torch.Tensor]:
        pairs = [self[int(i)] for i in indices]
        return torch.stack([p[0] for p in pairs]), torch.stack([p[1] for p in pairs])
