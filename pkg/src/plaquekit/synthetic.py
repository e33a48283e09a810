"""Deterministic synthetic cohort generation.

Builds a desk-scale stand-in for a private slide archive so every pipeline
stage can run from nothing: pyramidal RGB containers with two-stain
Beer-Lambert rendering, planted star-polygon plaques with exactly known
outlines, annotation XMLs, and a ``truth.json`` bookkeeping file recording
what was planted where.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from plaquekit.annotations import (
    SCANNER_RESOLUTION_NM,
    PolygonRoi,
    Scanner,
    WsiRecord,
    write_annotation_file,
    write_metadata_sidecar,
)
from plaquekit.errors import IoFailure
from plaquekit.stain import CANONICAL_H_DAB, od_to_rgb
from plaquekit.tiling import fill_polygon

PLAQUE_LABEL = "plaque"
TRUTH_FILENAME = "truth.json"

# concentration bands: near-pure anchors for each stain plus a light mix in
# the background keep percentile-based stain estimators well conditioned
_BACKGROUND_HEMA = (0.15, 0.40)
_BACKGROUND_DAB = (0.02, 0.06)
_ANCHOR_MAIN = (0.85, 1.15)
_ANCHOR_OTHER = (0.0, 0.005)


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of one generated cohort; defaults give an eight-slide mini-cohort."""

    n_wsis: int = 8
    rois_per_wsi: int = 4
    stain_matrix: tuple | None = None
    seed: int = 0
    level0_size: tuple[int, int] = (2048, 1536)
    level_count: int = 3
    roi_radius: tuple[float, float] = (45.0, 110.0)
    center_margin: float = 544.0
    min_separation: float = 260.0

    def __post_init__(self):
        if self.n_wsis < 1:
            raise ValueError("n_wsis must be >= 1")
        if self.rois_per_wsi < 1:
            raise ValueError("rois_per_wsi must be >= 1")
        if self.level_count < 1:
            raise ValueError("level_count must be >= 1")
        w, h = self.level0_size
        factor = 2 ** (self.level_count - 1)
        if w % factor or h % factor:
            raise ValueError(
                f"level0_size {self.level0_size} not divisible by {factor}"
            )
        lo, hi = self.roi_radius
        if not (0 < lo <= hi):
            raise ValueError("roi_radius must satisfy 0 < lo <= hi")
        if 2 * self.center_margin >= min(w, h):
            raise ValueError("center_margin leaves no room for ROI centers")
        if self.center_margin < hi:
            raise ValueError("center_margin must cover the largest ROI radius")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ValueError(f"unknown synthetic-cohort fields: {', '.join(unknown)}")
        return cls(**mapping)


def _shoelace(vertices) -> float:
    # bookkeeping route kept separate from the annotation module's area code
    # on purpose: truth records must not depend on what they later verify
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    return float(abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)) / 2.0)


def _smooth_field(rng: np.random.Generator, shape: tuple[int, int], cell: int = 128):
    """Low-frequency noise in [0,1]: coarse grid, bilinear upsample."""
    h, w = shape
    gh = max(h // cell, 1) + 1
    gw = max(w // cell, 1) + 1
    coarse = rng.random((gh, gw))
    yi = np.linspace(0.0, gh - 1.0, h)
    xi = np.linspace(0.0, gw - 1.0, w)
    y0 = np.minimum(yi.astype(np.int64), gh - 2)
    x0 = np.minimum(xi.astype(np.int64), gw - 2)
    fy = (yi - y0)[:, None]
    fx = (xi - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    return c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx + c10 * fy * (1 - fx) + c11 * fy * fx


def _place_centers(rng, n, bounds, min_sep):
    """Rejection-sample ``n`` centers inside ``bounds`` with pairwise separation."""
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    centers: list[tuple[float, float]] = []
    attempts = 0
    while len(centers) < n:
        attempts += 1
        if attempts > 10000 * n:
            raise ValueError(
                f"cannot place {n} centers with separation {min_sep} in {bounds}"
            )
        cx = rng.uniform(x_lo, x_hi)
        cy = rng.uniform(y_lo, y_hi)
        if all((cx - px) ** 2 + (cy - py) ** 2 >= min_sep**2 for px, py in centers):
            centers.append((cx, cy))
    return centers


def _star_polygon(rng, center, radius_range):
    """Simple polygon around ``center``: sorted angles cannot self-intersect."""
    n = int(rng.integers(5, 12))
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, n))
    radii = rng.uniform(radius_range[0], radius_range[1], n)
    cx, cy = center
    return [(cx + r * np.cos(a), cy + r * np.sin(a)) for r, a in zip(radii, angles)]


def _paint_disk(rng, c_main, c_other, cx, cy, radius):
    h, w = c_main.shape
    x0 = max(int(cx - radius) - 1, 0)
    x1 = min(int(cx + radius) + 2, w)
    y0 = max(int(cy - radius) - 1, 0)
    y1 = min(int(cy + radius) + 2, h)
    yy = np.arange(y0, y1, dtype=np.float64)[:, None] + 0.5
    xx = np.arange(x0, x1, dtype=np.float64)[None, :] + 0.5
    m = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
    c_main[y0:y1, x0:x1][m] = rng.uniform(*_ANCHOR_MAIN)
    c_other[y0:y1, x0:x1][m] = rng.uniform(*_ANCHOR_OTHER)


def _paint_polygon(rng, c_main, c_other, roi):
    h, w = c_main.shape
    bx0, by0, bx1, by1 = roi.bbox()
    x0 = max(int(bx0) - 1, 0)
    y0 = max(int(by0) - 1, 0)
    x1 = min(int(bx1) + 2, w)
    y1 = min(int(by1) + 2, h)
    m = fill_polygon(roi.vertices, (y1 - y0, x1 - x0), (x0, y0)).astype(bool)
    c_main[y0:y1, x0:x1][m] = rng.uniform(*_ANCHOR_MAIN)
    c_other[y0:y1, x0:x1][m] = rng.uniform(*_ANCHOR_OTHER)


def _render_level0(rng, spec, stain_matrix, rois):
    """Two-stain Beer-Lambert scene: mixed background, pure nuclei, pure plaques."""
    w, h = spec.level0_size
    lo, hi = _BACKGROUND_HEMA
    c_hema = lo + (hi - lo) * _smooth_field(rng, (h, w))
    lo, hi = _BACKGROUND_DAB
    c_dab = lo + (hi - lo) * _smooth_field(rng, (h, w))

    # percentile-based estimators read extreme angles off ~1% of tissue pixels,
    # so each pure-stain anchor must cover comfortably more than that
    n_nuclei = max((h * w) // 4000, 32)
    for _ in range(n_nuclei):
        radius = rng.uniform(3.5, 7.0)
        cx = rng.uniform(radius, w - radius)
        cy = rng.uniform(radius, h - radius)
        _paint_disk(rng, c_hema, c_dab, cx, cy, radius)

    for roi in rois:
        _paint_polygon(rng, c_dab, c_hema, roi)

    od = np.stack([c_hema, c_dab], axis=-1) @ stain_matrix.T
    return od_to_rgb(od)


def _box_downsample(level: np.ndarray) -> np.ndarray:
    """Exact 2x2 block mean, rounded to nearest."""
    h, w, c = level.shape
    blocks = level.reshape(h // 2, 2, w // 2, 2, c).astype(np.float64)
    return np.rint(blocks.mean(axis=(1, 3))).astype(np.uint8)


def _normalized_matrix(spec: SyntheticSpec) -> np.ndarray:
    m = np.asarray(
        spec.stain_matrix if spec.stain_matrix is not None else CANONICAL_H_DAB,
        dtype=np.float64,
    )
    if m.shape != (3, 2):
        raise ValueError(f"stain_matrix must be 3x2, got {m.shape}")
    if (m < 0).any():
        raise ValueError("stain_matrix must be nonnegative")
    norms = np.linalg.norm(m, axis=0)
    if (norms <= 0).any():
        raise ValueError("stain_matrix has a zero column")
    return m / norms


def make_synthetic_cohort(spec, out_dir) -> list[WsiRecord]:
    """Generate a cohort under ``out_dir``; returns the WSI records.

    Layout: one container directory per slide (``level_NN.png`` plus
    ``metadata.txt``), a sibling ``<wsi_id>.xml`` annotation file, and a
    cohort-level ``truth.json``. Fully determined by the spec (seed included).
    """
    if isinstance(spec, dict):
        spec = SyntheticSpec.from_mapping(spec)
    stain_matrix = _normalized_matrix(spec)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc

    rng = np.random.default_rng(spec.seed)
    w, h = spec.level0_size
    margin = spec.center_margin
    bounds = ((margin, w - margin), (margin, h - margin))
    dims = tuple(
        (w >> level, h >> level) for level in range(spec.level_count)
    )

    records: list[WsiRecord] = []
    truth_wsis = []
    for i in range(spec.n_wsis):
        wsi_id = f"syn_{i:02d}"
        scanner = Scanner.NANOZOOMER_2RS if i < (spec.n_wsis + 1) // 2 else Scanner.NANOZOOMER_S60

        centers = _place_centers(rng, spec.rois_per_wsi, bounds, spec.min_separation)
        rois = [
            PolygonRoi.create(
                f"roi_{j:02d}",
                wsi_id,
                PLAQUE_LABEL,
                _star_polygon(rng, center, spec.roi_radius),
            )
            for j, center in enumerate(centers)
        ]

        level = _render_level0(rng, spec, stain_matrix, rois)
        container = out / wsi_id
        try:
            container.mkdir(exist_ok=True)
            for lvl in range(spec.level_count):
                Image.fromarray(level, "RGB").save(container / f"level_{lvl:02d}.png")
                if lvl + 1 < spec.level_count:
                    level = _box_downsample(level)
            wsi = WsiRecord(
                wsi_id=wsi_id,
                image_path=container,
                scanner=scanner,
                resolution_nm_per_px=SCANNER_RESOLUTION_NM[scanner],
                base_magnification=40.0,
                level_count=spec.level_count,
                level_dimensions=dims,
            )
            write_metadata_sidecar(wsi, container / "metadata.txt")
            (out / f"{wsi_id}.xml").write_text(write_annotation_file(rois, wsi_id))
        except OSError as exc:
            raise IoFailure(f"cannot write {wsi_id} under {out}: {exc}") from exc

        records.append(wsi)
        truth_wsis.append(
            {
                "wsi_id": wsi_id,
                "scanner": scanner.value,
                "container": wsi_id,
                "annotation_file": f"{wsi_id}.xml",
                "level_dimensions": [list(d) for d in dims],
                "rois": [
                    {
                        "roi_id": roi.roi_id,
                        "label": roi.label,
                        "center": list(center),
                        "area": _shoelace(roi.vertices),
                        "vertices": [list(v) for v in roi.vertices],
                    }
                    for roi, center in zip(rois, centers)
                ],
            }
        )

    truth = {
        "seed": spec.seed,
        "n_wsis": spec.n_wsis,
        "rois_per_wsi": spec.rois_per_wsi,
        "stain_matrix": stain_matrix.tolist(),
        "wsis": truth_wsis,
    }
    try:
        (out / TRUTH_FILENAME).write_text(json.dumps(truth, indent=2) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {TRUTH_FILENAME}: {exc}") from exc
    return records
