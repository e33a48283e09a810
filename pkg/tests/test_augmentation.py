"""Corner-shift augmentation tests."""

import logging
import math

import numpy as np
import pytest

from plaquekit.annotations import PolygonRoi
from plaquekit.augmentation import (
    CORNERS,
    mask_bbox,
    roi_shift_variants,
    shift_offset_for_corner,
)
from plaquekit.errors import BBoxTooLarge
from plaquekit.tiling import rasterize_mask, sample_patches

from conftest import make_container


@pytest.fixture
def wsi(tmp_path):
    rng = np.random.default_rng(42)
    level0 = rng.integers(60, 220, size=(1024, 1536, 3), dtype=np.uint8)
    return make_container(level0, tmp_path, "wsi_a")


def star_roi(cx, cy, r_outer, roi_id="roi_0", wsi_id="wsi_a", n=7, seed=5):
    rng = np.random.default_rng(seed)
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    radii = rng.uniform(0.55 * r_outer, r_outer, n)
    verts = [
        (cx + r * math.cos(a), cy + r * math.sin(a)) for a, r in zip(angles, radii)
    ]
    return PolygonRoi.create(roi_id, wsi_id, "plaque", verts)


def square_roi(cx, cy, half, roi_id="roi_0", wsi_id="wsi_a"):
    return PolygonRoi.create(
        roi_id,
        wsi_id,
        "plaque",
        [
            (cx - half, cy - half),
            (cx + half, cy - half),
            (cx + half, cy + half),
            (cx - half, cy + half),
        ],
    )


class TestShiftOffset:
    def test_identity_at_tl(self):
        assert shift_offset_for_corner((0, 0, 32, 32), 128, "TL", 0) == (0, 0)

    def test_centered_to_br_analytic(self):
        # centered 32x32 bbox in a 128 patch starts at 48; BR start is 96
        assert shift_offset_for_corner((48, 48, 80, 80), 128, "BR", 0) == (48, 48)

    def test_all_corners_of_centered_box(self):
        bbox = (48, 48, 80, 80)
        assert shift_offset_for_corner(bbox, 128, "TL") == (-48, -48)
        assert shift_offset_for_corner(bbox, 128, "TR") == (48, -48)
        assert shift_offset_for_corner(bbox, 128, "BL") == (-48, 48)

    def test_margin_inset(self):
        dx, dy = shift_offset_for_corner((10, 10, 42, 42), 128, "TL", margin=4)
        assert (dx, dy) == (-6, -6)

    def test_too_large(self):
        with pytest.raises(BBoxTooLarge):
            shift_offset_for_corner((0, 0, 130, 30), 128, "TL")
        with pytest.raises(BBoxTooLarge):
            shift_offset_for_corner((0, 0, 126, 30), 128, "TL", margin=4)

    def test_unknown_corner(self):
        with pytest.raises(ValueError):
            shift_offset_for_corner((0, 0, 10, 10), 128, "XX")

    def test_random_bboxes_land_at_margin(self):
        rng = np.random.default_rng(9)
        for _ in range(300):
            size = int(rng.choice([128, 256]))
            margin = int(rng.integers(0, 5))
            w = int(rng.integers(1, size - margin))
            h = int(rng.integers(1, size - margin))
            x0 = float(rng.integers(0, size - w + 1))
            y0 = float(rng.integers(0, size - h + 1))
            bbox = (x0, y0, x0 + w, y0 + h)
            for corner in CORNERS:
                dx, dy = shift_offset_for_corner(bbox, size, corner, margin)
                nx0, ny0 = x0 + dx, y0 + dy
                nx1, ny1 = nx0 + w, ny0 + h
                assert 0 <= nx0 and 0 <= ny0 and nx1 <= size and ny1 <= size
                want_x = margin if corner in ("TL", "BL") else size - margin - w
                want_y = margin if corner in ("TL", "TR") else size - margin - h
                assert nx0 == pytest.approx(want_x)
                assert ny0 == pytest.approx(want_y)


class TestMaskBbox:
    def test_simple(self):
        m = np.zeros((64, 64), dtype=np.uint8)
        m[10:20, 30:45] = 1
        assert mask_bbox(m) == (30, 10, 45, 20)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mask_bbox(np.zeros((8, 8), dtype=np.uint8))


class TestRoiShiftVariants:
    def variants_of(self, wsi, rois, size=128):
        samples = sample_patches(wsi, rois, size, 1)
        return samples[0], roi_shift_variants(samples[0], wsi, rois)

    def test_four_variants_flush_to_corners(self, wsi):
        roi = star_roi(700.0, 500.0, 60.0)
        base, variants = self.variants_of(wsi, [roi])
        assert [v.augmentation_tag for v in variants] == [
            "corner_TL",
            "corner_TR",
            "corner_BL",
            "corner_BR",
        ]
        for v, corner in zip(variants, CORNERS):
            seed_mask = rasterize_mask([roi], v.spec, wsi)
            x0, y0, x1, y1 = mask_bbox(seed_mask)
            assert (x0 == 0) == (corner in ("TL", "BL"))
            assert (y0 == 0) == (corner in ("TL", "TR"))
            assert (x1 == 128) == (corner in ("TR", "BR"))
            assert (y1 == 128) == (corner in ("BL", "BR"))

    def test_seed_population_invariant(self, wsi):
        roi = star_roi(700.0, 500.0, 55.0)
        base, variants = self.variants_of(wsi, [roi])
        base_pop = int(rasterize_mask([roi], base.spec, wsi).sum())
        assert len(variants) == 4
        for v in variants:
            assert int(rasterize_mask([roi], v.spec, wsi).sum()) == base_pop

    def test_images_are_rewindows_not_padding(self, wsi):
        # corner variant pixels must equal a direct read at the shifted
        # origin (content comes from the slide, not from shifting the base)
        from plaquekit.tiling import read_region

        roi = star_roi(700.0, 500.0, 50.0)
        base, variants = self.variants_of(wsi, [roi])
        for v in variants:
            direct = read_region(wsi, v.spec.origin, v.spec.size, v.spec.working_level)
            np.testing.assert_array_equal(v.image, direct)
            assert not np.array_equal(v.image, base.image)

    def test_full_patch_roi_gives_identical_variants(self, wsi):
        roi = square_roi(700.0, 500.0, 140.0)  # 280 level-0 px > 128 window
        base, variants = self.variants_of(wsi, [roi])
        assert len(variants) == 4
        for v in variants:
            assert v.spec.level_origin(wsi) == base.spec.level_origin(wsi)
            np.testing.assert_array_equal(v.mask, base.mask)

    def test_boundary_drop_logged(self, wsi, caplog):
        roi = square_roi(40.0, 40.0, 24.0)  # near TL of the slide
        samples = sample_patches(wsi, [roi], 128, 1)
        with caplog.at_level(logging.WARNING, logger="plaquekit.augmentation"):
            variants = roi_shift_variants(samples[0], wsi, [roi])
        dropped = [r for r in caplog.records if "dropped corner_" in r.message]
        assert len(variants) + len(dropped) == 4
        assert len(dropped) >= 1
        for v in variants:
            lx, ly = v.spec.level_origin(wsi)
            assert 0 <= lx and 0 <= ly

    def test_neighbor_roi_membership(self, wsi):
        seed = square_roi(700.0, 500.0, 25.0, "roi_seed")
        nb = square_roi(820.0, 500.0, 18.0, "roi_nb")
        samples = sample_patches(wsi, [seed, nb], 128, 1)
        sample = [s for s in samples if s.spec.source_rois[0] == "roi_seed"][0]
        variants = roi_shift_variants(sample, wsi, [seed, nb])
        for v in variants:
            nb_mask = rasterize_mask([nb], v.spec, wsi)
            if "roi_nb" in v.spec.source_rois:
                assert nb_mask.sum() > 0
                np.testing.assert_array_equal(
                    v.mask, rasterize_mask([seed], v.spec, wsi) | nb_mask
                )
            else:
                assert nb_mask.sum() == 0
        # seed pinned left: neighbor (to the right) stays in view; pinned
        # right: neighbor may leave; at least one variant must differ
        members = [tuple(v.spec.source_rois) for v in variants]
        assert ("roi_seed", "roi_nb") in members

    def test_retagging_rejected(self, wsi):
        roi = star_roi(700.0, 500.0, 50.0)
        base, variants = self.variants_of(wsi, [roi])
        with pytest.raises(ValueError, match="already tagged"):
            roi_shift_variants(variants[0], wsi, [roi])

    def test_empty_mask_rejected(self, wsi):
        roi = star_roi(700.0, 500.0, 50.0)
        samples = sample_patches(wsi, [roi], 128, 1)
        samples[0].mask[:] = 0
        with pytest.raises(ValueError, match="empty"):
            roi_shift_variants(samples[0], wsi, [roi])

    def test_deterministic(self, wsi):
        roi = star_roi(700.0, 500.0, 50.0)
        s1 = sample_patches(wsi, [roi], 128, 1)[0]
        s2 = sample_patches(wsi, [roi], 128, 1)[0]
        v1 = roi_shift_variants(s1, wsi, [roi])
        v2 = roi_shift_variants(s2, wsi, [roi])
        assert len(v1) == len(v2)
        for a, b in zip(v1, v2):
            assert a.spec == b.spec
            np.testing.assert_array_equal(a.image, b.image)
            np.testing.assert_array_equal(a.mask, b.mask)
