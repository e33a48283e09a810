"""ROI-guided patch extraction with rasterized masks and context ratios.

Patches are windows of ``size`` x ``size`` pixels on the working level
(the level nearest 20x). A patch is addressed by its integer working-level
origin; the level-0 origin stored on :class:`PatchSpec` is that origin times
the per-axis downsample, so corner-shift augmentation can translate windows
by whole working-level pixels without changing the rasterization grid phase.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from plaquekit.annotations import (
    PolygonRoi,
    WsiRecord,
    polygon_centroid,
    scale_to_level,
)
from plaquekit.errors import OutOfBounds, UnreadableImage

log = logging.getLogger("plaquekit.tiling")

PATCH_SIZES = (128, 256)
AUGMENTATION_TAGS = ("none", "corner_TL", "corner_TR", "corner_BL", "corner_BR")
NORMALIZATION_TAGS = ("raw", "macenko", "vahadane")

#: Manifest JSONL field order.
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


def level_scale(wsi: WsiRecord, level: int) -> tuple[float, float]:
    """Per-axis downsample factor of ``level`` relative to level 0."""
    w0, h0 = wsi.level_dimensions[0]
    wl, hl = wsi.level_dimensions[level]
    return w0 / wl, h0 / hl


def working_level(wsi: WsiRecord, target_magnification: float = 20.0) -> int:
    """Pyramid level whose magnification is nearest ``target_magnification``."""
    best, best_err = 0, float("inf")
    for lv in range(wsi.level_count):
        sx, _ = level_scale(wsi, lv)
        err = abs(wsi.base_magnification / sx - target_magnification)
        if err < best_err:
            best, best_err = lv, err
    return best


@dataclass(frozen=True)
class PatchSpec:
    """Addressing of one patch window.

    ``origin`` is in level-0 pixels and always sits on the working-level
    grid (integer multiples of the level downsample). ``source_rois`` lists
    the roi_ids whose bounding boxes intersect the window, seed ROI first.
    """

    wsi_id: str
    origin: tuple[float, float]
    size: int
    working_level: int
    source_rois: tuple[str, ...] = ()

    def __post_init__(self):
        if self.size not in PATCH_SIZES:
            raise ValueError(f"patch size {self.size} not in {PATCH_SIZES}")

    @classmethod
    def at_level_origin(
        cls,
        wsi: WsiRecord,
        level_origin: tuple[int, int],
        size: int,
        level: int,
        source_rois: tuple[str, ...] = (),
    ) -> "PatchSpec":
        """Build a spec from an integer working-level origin, bounds-checked."""
        lx, ly = level_origin
        wl, hl = wsi.level_dimensions[level]
        if not (0 <= lx and 0 <= ly and lx + size <= wl and ly + size <= hl):
            raise OutOfBounds(
                f"{wsi.wsi_id}: window ({lx},{ly})+{size} exceeds level {level} "
                f"extent {wl}x{hl}"
            )
        sx, sy = level_scale(wsi, level)
        return cls(wsi.wsi_id, (lx * sx, ly * sy), size, level, source_rois)

    def level_origin(self, wsi: WsiRecord) -> tuple[int, int]:
        """Integer working-level origin recovered from the level-0 origin."""
        sx, sy = level_scale(wsi, self.working_level)
        return int(round(self.origin[0] / sx)), int(round(self.origin[1] / sy))


@dataclass
class PatchSample:
    """One extracted patch: image, binary mask, and bookkeeping tags."""

    spec: PatchSpec
    image: np.ndarray
    mask: np.ndarray
    context_ratio: float
    augmentation_tag: str = "none"
    normalization_tag: str = "raw"

    def __post_init__(self):
        if self.augmentation_tag not in AUGMENTATION_TAGS:
            raise ValueError(f"unknown augmentation_tag {self.augmentation_tag!r}")
        if self.normalization_tag not in NORMALIZATION_TAGS:
            raise ValueError(f"unknown normalization_tag {self.normalization_tag!r}")


def patch_identifier(spec: PatchSpec, augmentation_tag: str = "none") -> str:
    """Stable patch id: ``<wsi_id>__<seed_roi>`` plus the variant tag if any."""
    seed = spec.source_rois[0] if spec.source_rois else "bg"
    base = f"{spec.wsi_id}__{seed}"
    return base if augmentation_tag == "none" else f"{base}__{augmentation_tag}"


def read_region(
    wsi: WsiRecord, origin: tuple[float, float], size: int, level: int
) -> np.ndarray:
    """Read a ``size`` x ``size`` RGB window at ``level``.

    ``origin`` is in level-0 pixels and is mapped onto the level grid by
    rounding to the nearest level pixel. The WSI container is a directory
    of per-level PNGs named ``level_00.png``, ``level_01.png``, ...
    """
    if not (0 <= level < wsi.level_count):
        raise OutOfBounds(f"{wsi.wsi_id}: level {level} not in pyramid")
    sx, sy = level_scale(wsi, level)
    lx = int(round(origin[0] / sx))
    ly = int(round(origin[1] / sy))
    wl, hl = wsi.level_dimensions[level]
    if not (0 <= lx and 0 <= ly and lx + size <= wl and ly + size <= hl):
        raise OutOfBounds(
            f"{wsi.wsi_id}: window ({lx},{ly})+{size} exceeds level {level} "
            f"extent {wl}x{hl}"
        )
    path = Path(wsi.image_path) / f"level_{level:02d}.png"
    try:
        with Image.open(path) as im:
            tile = im.convert("RGB").crop((lx, ly, lx + size, ly + size))
            return np.asarray(tile, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise UnreadableImage(f"{wsi.wsi_id}: missing {path}") from exc
    except OSError as exc:
        raise UnreadableImage(f"{wsi.wsi_id}: cannot decode {path}: {exc}") from exc


def fill_polygon(
    vertices: np.ndarray, shape: tuple[int, int], origin: tuple[float, float] = (0.0, 0.0)
) -> np.ndarray:
    """Even-odd rasterization: pixel = 1 iff its center lies inside the polygon.

    ``vertices`` are (x, y) pairs in the same coordinate frame as ``origin``;
    pixel (row i, col j) has center (origin_x + j + 0.5, origin_y + i + 0.5).
    """
    h, w = shape
    vx = np.asarray([v[0] for v in vertices], dtype=np.float64) - origin[0]
    vy = np.asarray([v[1] for v in vertices], dtype=np.float64) - origin[1]
    xc = np.arange(w, dtype=np.float64) + 0.5
    yc = np.arange(h, dtype=np.float64) + 0.5
    inside = np.zeros((h, w), dtype=bool)
    n = len(vx)
    for i in range(n):
        j = (i + 1) % n
        y0, y1 = vy[i], vy[j]
        crosses = (y0 > yc) != (y1 > yc)
        if not crosses.any():
            continue
        # x of the edge at each crossing row; strict < keeps the rule half-open
        xint = vx[i] + (yc - y0) / (y1 - y0) * (vx[j] - vx[i])
        inside[crosses] ^= xc[None, :] < xint[crosses, None]
    return inside.astype(np.uint8)


def rasterize_mask(rois: list[PolygonRoi], spec: PatchSpec, wsi: WsiRecord) -> np.ndarray:
    """Union mask of all ``rois`` over the patch window, at the working level."""
    for roi in rois:
        if roi.wsi_id != spec.wsi_id:
            raise ValueError(
                f"roi {roi.roi_id} belongs to {roi.wsi_id}, spec to {spec.wsi_id}"
            )
    lx, ly = spec.level_origin(wsi)
    mask = np.zeros((spec.size, spec.size), dtype=np.uint8)
    for roi in rois:
        scaled = scale_to_level(roi, 0, spec.working_level, wsi)
        x0, y0, x1, y1 = scaled.bbox()
        if x1 <= lx or y1 <= ly or x0 >= lx + spec.size or y0 >= ly + spec.size:
            continue
        mask |= fill_polygon(scaled.vertices, (spec.size, spec.size), (lx, ly))
    return mask


def context_ratio(mask: np.ndarray) -> float:
    """Foreground fraction of a binary mask; population count over size squared."""
    mask = np.asarray(mask)
    return float(np.count_nonzero(mask)) / mask.size


def intersecting_rois(
    rois: list[PolygonRoi], wsi: WsiRecord, level_origin: tuple[int, int], size: int, level: int
) -> list[PolygonRoi]:
    """ROIs whose working-level bbox overlaps the window, sorted by roi_id."""
    lx, ly = level_origin
    hits = []
    for roi in rois:
        x0, y0, x1, y1 = scale_to_level(roi, 0, level, wsi).bbox()
        if x1 > lx and y1 > ly and x0 < lx + size and y0 < ly + size:
            hits.append(roi)
    return sorted(hits, key=lambda r: r.roi_id)


def sample_patches(
    wsi: WsiRecord, rois: list[PolygonRoi], size: int, level: int
) -> list[PatchSample]:
    """One patch per ROI, centered on the ROI centroid then clamped into bounds.

    Each sample's mask is the union over ALL ROIs intersecting the window,
    not only the seed ROI. ROIs whose bbox exceeds the patch at the working
    level are recorded via a warning log and still emitted centered. Output
    is ordered by (wsi_id, roi_id).
    """
    wl, hl = wsi.level_dimensions[level]
    if size > wl or size > hl:
        raise OutOfBounds(
            f"{wsi.wsi_id}: patch size {size} exceeds level {level} extent {wl}x{hl}"
        )
    samples = []
    for roi in sorted(rois, key=lambda r: (r.wsi_id, r.roi_id)):
        scaled = scale_to_level(roi, 0, level, wsi)
        x0, y0, x1, y1 = scaled.bbox()
        if x1 - x0 > size or y1 - y0 > size:
            log.warning(
                "roi larger than patch: %s bbox %.0fx%.0f exceeds %d px at level %d",
                roi.roi_id,
                x1 - x0,
                y1 - y0,
                size,
                level,
            )
        cx, cy = polygon_centroid(scaled)
        lx = int(round(cx - size / 2))
        ly = int(round(cy - size / 2))
        lx = min(max(lx, 0), wl - size)
        ly = min(max(ly, 0), hl - size)
        hits = intersecting_rois(rois, wsi, (lx, ly), size, level)
        ids = [roi.roi_id] + [r.roi_id for r in hits if r.roi_id != roi.roi_id]
        spec = PatchSpec.at_level_origin(wsi, (lx, ly), size, level, tuple(ids))
        image = read_region(wsi, spec.origin, size, level)
        mask = rasterize_mask(hits if roi in hits else hits + [roi], spec, wsi)
        samples.append(PatchSample(spec, image, mask, context_ratio(mask)))
    return samples


# --- manifest persistence ---------------------------------------------------


def manifest_row(sample: PatchSample, wsi: WsiRecord, image_path: str, mask_path: str) -> dict:
    return {
        "patch_id": patch_identifier(sample.spec, sample.augmentation_tag),
        "wsi_id": sample.spec.wsi_id,
        "scanner": wsi.scanner.value,
        "origin_x": sample.spec.origin[0],
        "origin_y": sample.spec.origin[1],
        "level": sample.spec.working_level,
        "size": sample.spec.size,
        "context_ratio": sample.context_ratio,
        "augmentation_tag": sample.augmentation_tag,
        "normalization_tag": sample.normalization_tag,
        "image_path": image_path,
        "mask_path": mask_path,
    }


def write_manifest(rows: list[dict], path: Path) -> None:
    """Write manifest rows as JSON lines in the documented field order."""
    path = Path(path)
    with path.open("w") as fh:
        for row in rows:
            ordered = {k: row[k] for k in MANIFEST_FIELDS}
            fh.write(json.dumps(ordered) + "\n")


def read_manifest(path: Path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def save_samples(
    samples: list[PatchSample], wsi: WsiRecord, out_dir: Path
) -> list[dict]:
    """Persist images and masks as PNG under ``out_dir``; return manifest rows.

    Image paths in the rows are relative to ``out_dir`` (the manifest's home),
    masks single-channel with values {0, 255}.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for sample in samples:
        pid = patch_identifier(sample.spec, sample.augmentation_tag)
        image_rel = f"images/{pid}.png"
        mask_rel = f"masks/{pid}.png"
        Image.fromarray(sample.image, mode="RGB").save(out_dir / image_rel)
        Image.fromarray((sample.mask > 0).astype(np.uint8) * 255, mode="L").save(
            out_dir / mask_rel
        )
        rows.append(manifest_row(sample, wsi, image_rel, mask_rel))
    return rows
