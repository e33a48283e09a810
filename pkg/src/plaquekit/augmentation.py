"""Corner-shift augmentation: re-window a patch so the annotated object sits
at each of the four patch corners.

Variants re-read the slide at the shifted origin rather than translating and
padding the original buffer, so each corner variant carries genuine
neighborhood content. Offsets are whole working-level pixels, which keeps the
rasterization grid phase fixed: an unclipped seed ROI keeps its exact mask
population count in every surviving variant.
"""

from __future__ import annotations

import logging

import numpy as np

from plaquekit.annotations import PolygonRoi, WsiRecord
from plaquekit.errors import BBoxTooLarge
from plaquekit.tiling import (
    PatchSample,
    PatchSpec,
    context_ratio,
    intersecting_rois,
    rasterize_mask,
    read_region,
)

log = logging.getLogger("plaquekit.augmentation")

CORNERS = ("TL", "TR", "BL", "BR")


def shift_offset_for_corner(
    roi_bbox: tuple[float, float, float, float],
    size: int,
    corner: str,
    margin: int = 0,
) -> tuple[float, float]:
    """Translation placing ``roi_bbox`` flush to ``corner`` at ``margin`` inset.

    ``roi_bbox`` is (x0, y0, x1, y1) in patch coordinates, end-exclusive.
    Returns (dx, dy) to add to the bbox; the translated bbox lies fully
    inside the size x size patch.
    """
    if corner not in CORNERS:
        raise ValueError(f"unknown corner {corner!r}")
    x0, y0, x1, y1 = roi_bbox
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise ValueError(f"empty bbox {roi_bbox}")
    if w + margin > size or h + margin > size:
        raise BBoxTooLarge(
            f"bbox {w:.0f}x{h:.0f} + margin {margin} exceeds patch size {size}"
        )
    tx = margin if corner in ("TL", "BL") else size - margin - w
    ty = margin if corner in ("TL", "TR") else size - margin - h
    return tx - x0, ty - y0


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Tight integer bbox (x0, y0, x1, y1), end-exclusive, of a binary mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("empty mask has no bbox")
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def roi_shift_variants(
    sample: PatchSample,
    wsi: WsiRecord,
    rois: list[PolygonRoi],
    margin: int = 0,
) -> list[PatchSample]:
    """Up to 4 corner variants of ``sample``, in TL, TR, BL, BR order.

    The seed ROI (first of ``spec.source_rois``) is pinned to each corner by
    its rasterized mask bbox; offsets are integers so the seed's population
    count is preserved whenever the base window did not clip it. Variants
    whose shifted window exits the slide are dropped and logged. Re-shifting
    an already tagged sample is rejected.
    """
    if sample.augmentation_tag != "none":
        raise ValueError(
            f"sample already tagged {sample.augmentation_tag!r}; refusing to re-shift"
        )
    if not sample.mask.any():
        raise ValueError("sample mask is empty; nothing to place at a corner")
    spec = sample.spec
    if not spec.source_rois:
        raise ValueError("spec carries no source ROIs")
    seed_id = spec.source_rois[0]
    by_id = {r.roi_id: r for r in rois}
    if seed_id not in by_id:
        raise ValueError(f"seed roi {seed_id} not among provided ROIs")
    seed_mask = rasterize_mask([by_id[seed_id]], spec, wsi)
    if not seed_mask.any():
        raise ValueError(f"seed roi {seed_id} does not cover the base window")
    bbox = mask_bbox(seed_mask)
    size = spec.size
    level = spec.working_level
    wl, hl = wsi.level_dimensions[level]
    base_lx, base_ly = spec.level_origin(wsi)

    variants: list[PatchSample] = []
    for corner in CORNERS:
        dx, dy = shift_offset_for_corner(bbox, size, corner, margin)
        dx, dy = int(dx), int(dy)
        # moving the ROI by +d within the frame moves the window by -d
        lx, ly = base_lx - dx, base_ly - dy
        if not (0 <= lx and 0 <= ly and lx + size <= wl and ly + size <= hl):
            log.warning(
                "dropped corner_%s of %s__%s: window (%d,%d)+%d exits level %d "
                "extent %dx%d",
                corner, spec.wsi_id, seed_id, lx, ly, size, level, wl, hl,
            )
            continue
        hits = intersecting_rois(rois, wsi, (lx, ly), size, level)
        ids = [seed_id] + [r.roi_id for r in hits if r.roi_id != seed_id]
        vspec = PatchSpec.at_level_origin(wsi, (lx, ly), size, level, tuple(ids))
        image = read_region(wsi, vspec.origin, size, level)
        if by_id[seed_id] not in hits:
            hits = hits + [by_id[seed_id]]
        mask = rasterize_mask(hits, vspec, wsi)
        variants.append(
            PatchSample(
                vspec,
                image,
                mask,
                context_ratio(mask),
                augmentation_tag=f"corner_{corner}",
                normalization_tag=sample.normalization_tag,
            )
        )
    return variants
