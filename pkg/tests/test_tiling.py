"""Patch extraction, rasterization, and manifest tests."""

import json
import logging
import math

import numpy as np
import pytest
from PIL import Image

from plaquekit.annotations import PolygonRoi, polygon_area, scale_to_level
from plaquekit.errors import OutOfBounds, UnreadableImage
from plaquekit.tiling import (
    MANIFEST_FIELDS,
    PatchSample,
    PatchSpec,
    context_ratio,
    fill_polygon,
    intersecting_rois,
    patch_identifier,
    rasterize_mask,
    read_manifest,
    read_region,
    sample_patches,
    save_samples,
    working_level,
    write_manifest,
)

from conftest import box_downsample, make_container


@pytest.fixture
def flat_wsi(tmp_path):
    level0 = np.full((1024, 1536, 3), (180, 120, 200), dtype=np.uint8)
    return make_container(level0, tmp_path, "wsi_a")


@pytest.fixture
def checker_wsi(tmp_path):
    yy, xx = np.mgrid[0:1024, 0:1536]
    cells = ((xx // 64 + yy // 64) % 2).astype(np.uint8) * 255
    level0 = np.stack([cells] * 3, axis=-1)
    return make_container(level0, tmp_path, "wsi_c"), level0


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


class TestWorkingLevel:
    def test_40x_scan_gives_level_1(self, flat_wsi):
        assert working_level(flat_wsi, 20.0) == 1

    def test_level_0_when_target_is_base(self, flat_wsi):
        assert working_level(flat_wsi, 40.0) == 0


class TestReadRegion:
    def test_constant_image(self, flat_wsi):
        buf = read_region(flat_wsi, (256.0, 128.0), 128, 1)
        assert buf.shape == (128, 128, 3)
        assert (buf == (180, 120, 200)).all()

    def test_checkerboard_phase_level0(self, checker_wsi):
        wsi, level0 = checker_wsi
        buf = read_region(wsi, (192.0, 320.0), 128, 0)
        np.testing.assert_array_equal(buf, level0[320:448, 192:320])

    def test_checkerboard_phase_level1(self, checker_wsi):
        wsi, level0 = checker_wsi
        down = box_downsample(level0)
        buf = read_region(wsi, (128.0, 64.0), 128, 1)  # level-1 px (64, 32)
        np.testing.assert_array_equal(buf, down[32:160, 64:192])

    def test_out_of_bounds(self, flat_wsi):
        with pytest.raises(OutOfBounds):
            read_region(flat_wsi, (999999.0, 0.0), 128, 0)
        with pytest.raises(OutOfBounds):
            read_region(flat_wsi, (-10.0, 0.0) , 128, 0)
        with pytest.raises(OutOfBounds):
            read_region(flat_wsi, (0.0, 0.0), 128, 7)

    def test_window_touching_far_edge_ok(self, flat_wsi):
        wl, hl = flat_wsi.level_dimensions[1]
        sx, sy = 2.0, 2.0
        buf = read_region(flat_wsi, ((wl - 128) * sx, (hl - 128) * sy), 128, 1)
        assert buf.shape == (128, 128, 3)

    def test_missing_file(self, flat_wsi, tmp_path):
        (tmp_path / "wsi_a" / "level_01.png").unlink()
        with pytest.raises(UnreadableImage):
            read_region(flat_wsi, (0.0, 0.0), 128, 1)


class TestFillPolygon:
    def test_full_cover(self):
        verts = [(-10.0, -10.0), (200.0, -10.0), (200.0, 200.0), (-10.0, 200.0)]
        mask = fill_polygon(np.array(verts), (128, 128))
        assert mask.all()

    def test_pixel_aligned_square_exact(self):
        verts = [(10.0, 20.0), (42.0, 20.0), (42.0, 52.0), (10.0, 52.0)]
        mask = fill_polygon(np.array(verts), (64, 64))
        assert mask.sum() == 32 * 32
        assert mask[20:52, 10:42].all()
        assert mask.sum() == mask[20:52, 10:42].sum()

    def test_random_triangles_match_shoelace(self):
        # foreground count tracks the analytic area within 2% once the
        # triangle is big enough (boundary error is O(perimeter), area grows
        # faster; very thin slivers are excluded by the aspect guard)
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 200:
            verts = rng.uniform(10, 246, size=(3, 2))
            try:
                roi = PolygonRoi.create("r", "w", "p", [tuple(v) for v in verts])
            except Exception:
                continue
            area = polygon_area(roi)
            longest = max(
                float(np.hypot(*(verts[i] - verts[(i + 1) % 3])))
                for i in range(3)
            )
            if area < 500 or area / longest**2 < 0.05:
                continue
            mask = fill_polygon(np.array(roi.vertices), (256, 256))
            assert abs(int(mask.sum()) - area) / area < 0.02
            checked += 1


class TestContextRatio:
    def test_all_ones(self):
        assert context_ratio(np.ones((128, 128), dtype=np.uint8)) == 1.0

    def test_quarter_square_exact(self):
        mask = np.zeros((128, 128), dtype=np.uint8)
        mask[32:96, 32:96] = 1
        assert context_ratio(mask) == 0.25

    def test_ratio_times_size_sq_is_population(self):
        rng = np.random.default_rng(3)
        mask = (rng.random((128, 128)) > 0.7).astype(np.uint8)
        ratio = context_ratio(mask)
        assert ratio * 128 * 128 == pytest.approx(int(mask.sum()), abs=1e-9)

    def test_same_roi_bigger_patch_quarters_ratio(self, flat_wsi):
        roi = square_roi(300.0, 300.0, 40.0)  # level-0 square, side 80
        spec128 = PatchSpec.at_level_origin(flat_wsi, (100, 100), 128, 1, ("roi_0",))
        spec256 = PatchSpec.at_level_origin(flat_wsi, (100, 100), 256, 1, ("roi_0",))
        m128 = rasterize_mask([roi], spec128, flat_wsi)
        m256 = rasterize_mask([roi], spec256, flat_wsi)
        # same grid alignment, window fully contains the ROI in both cases
        assert int(m128.sum()) == int(m256.sum())
        assert context_ratio(m256) == pytest.approx(context_ratio(m128) / 4)


class TestRasterizeMask:
    def test_no_intersection_all_zero(self, flat_wsi):
        roi = square_roi(1400.0, 900.0, 20.0)
        spec = PatchSpec.at_level_origin(flat_wsi, (0, 0), 128, 1, ())
        assert rasterize_mask([roi], spec, flat_wsi).sum() == 0

    def test_wsi_mismatch_rejected(self, flat_wsi):
        roi = square_roi(300.0, 300.0, 20.0, wsi_id="other")
        spec = PatchSpec.at_level_origin(flat_wsi, (0, 0), 128, 1, ())
        with pytest.raises(ValueError):
            rasterize_mask([roi], spec, flat_wsi)

    def test_union_over_overlapping_rois(self, flat_wsi):
        a = square_roi(260.0, 260.0, 30.0, "roi_a")
        b = square_roi(300.0, 300.0, 30.0, "roi_b")
        spec = PatchSpec.at_level_origin(flat_wsi, (64, 64), 128, 1, ("roi_a", "roi_b"))
        union = rasterize_mask([a, b], spec, flat_wsi)
        ma = rasterize_mask([a], spec, flat_wsi)
        mb = rasterize_mask([b], spec, flat_wsi)
        np.testing.assert_array_equal(union, ma | mb)
        assert int(union.sum()) < int(ma.sum()) + int(mb.sum())  # overlap exists


class TestSamplePatches:
    def test_three_disjoint_rois(self, flat_wsi):
        rois = [
            square_roi(300.0, 300.0, 30.0, "roi_0"),
            square_roi(700.0, 500.0, 30.0, "roi_1"),
            square_roi(1100.0, 800.0, 30.0, "roi_2"),
        ]
        samples = sample_patches(flat_wsi, rois, 128, 1)
        assert [s.spec.source_rois[0] for s in samples] == ["roi_0", "roi_1", "roi_2"]
        for s in samples:
            assert s.mask.sum() > 0
            assert s.image.shape == (128, 128, 3)
            assert s.context_ratio * 128 * 128 == pytest.approx(int(s.mask.sum()))

    def test_centroid_centered(self, flat_wsi):
        roi = square_roi(600.0, 400.0, 32.0)
        (sample,) = sample_patches(flat_wsi, [roi], 128, 1)
        scaled = scale_to_level(roi, 0, 1, flat_wsi)
        from plaquekit.annotations import polygon_centroid

        cx, cy = polygon_centroid(scaled)
        lx, ly = sample.spec.level_origin(flat_wsi)
        assert abs((lx + 64) - cx) <= 0.5
        assert abs((ly + 64) - cy) <= 0.5

    def test_neighbors_included_in_256(self, flat_wsi):
        # two ROIs 10 level-0 px apart: both patches' masks hold both ROIs
        a = square_roi(600.0, 400.0, 30.0, "roi_a")
        b = square_roi(600.0 + 70.0, 400.0, 30.0, "roi_b")  # 10 px gap
        samples = sample_patches(flat_wsi, [a, b], 256, 1)
        assert len(samples) == 2
        for s in samples:
            assert set(s.spec.source_rois) == {"roi_a", "roi_b"}
            only_a = rasterize_mask([a], s.spec, flat_wsi)
            only_b = rasterize_mask([b], s.spec, flat_wsi)
            assert int(only_a.sum()) > 0 and int(only_b.sum()) > 0
            np.testing.assert_array_equal(s.mask, only_a | only_b)

    def test_edge_clamping(self, flat_wsi):
        roi = square_roi(12.0, 16.0, 10.0)  # centroid 10 level-1 px from edge
        (sample,) = sample_patches(flat_wsi, [roi], 128, 1)
        lx, ly = sample.spec.level_origin(flat_wsi)
        assert (lx, ly) == (0, 0)
        assert sample.mask.sum() > 0

    def test_oversized_roi_logged_and_emitted(self, flat_wsi, caplog):
        roi = square_roi(600.0, 400.0, 200.0)  # 200 px at level 1 > 128
        with caplog.at_level(logging.WARNING, logger="plaquekit.tiling"):
            samples = sample_patches(flat_wsi, [roi], 128, 1)
        assert len(samples) == 1
        assert any("larger than patch" in r.message for r in caplog.records)
        assert samples[0].mask.all()  # saturated window

    def test_determinism(self, flat_wsi):
        rois = [square_roi(300.0, 300.0, 30.0), square_roi(700.0, 500.0, 25.0, "roi_1")]
        a = sample_patches(flat_wsi, rois, 128, 1)
        b = sample_patches(flat_wsi, rois, 128, 1)
        for s, t in zip(a, b):
            assert s.spec == t.spec
            np.testing.assert_array_equal(s.image, t.image)
            np.testing.assert_array_equal(s.mask, t.mask)


class TestManifest:
    def test_round_trip_and_field_order(self, flat_wsi, tmp_path):
        rois = [square_roi(300.0, 300.0, 30.0), square_roi(700.0, 500.0, 25.0, "roi_1")]
        samples = sample_patches(flat_wsi, rois, 128, 1)
        out = tmp_path / "patches"
        rows = save_samples(samples, flat_wsi, out)
        write_manifest(rows, out / "manifest.jsonl")
        back = read_manifest(out / "manifest.jsonl")
        assert back == rows
        for line in (out / "manifest.jsonl").read_text().splitlines():
            assert tuple(json.loads(line).keys()) == MANIFEST_FIELDS

    def test_mask_png_binary_255(self, flat_wsi, tmp_path):
        samples = sample_patches(flat_wsi, [square_roi(300.0, 300.0, 30.0)], 128, 1)
        rows = save_samples(samples, flat_wsi, tmp_path / "p")
        arr = np.asarray(Image.open(tmp_path / "p" / rows[0]["mask_path"]))
        assert set(np.unique(arr)) <= {0, 255}
        assert arr.ndim == 2

    def test_patch_identifier(self, flat_wsi):
        spec = PatchSpec.at_level_origin(flat_wsi, (0, 0), 128, 1, ("roi_9",))
        assert patch_identifier(spec) == "wsi_a__roi_9"
        assert patch_identifier(spec, "corner_BR") == "wsi_a__roi_9__corner_BR"


class TestIntersectingRois:
    def test_sorted_and_filtered(self, flat_wsi):
        rois = [
            square_roi(300.0, 300.0, 30.0, "roi_b"),
            square_roi(330.0, 300.0, 30.0, "roi_a"),
            square_roi(1200.0, 900.0, 30.0, "roi_z"),
        ]
        hits = intersecting_rois(rois, flat_wsi, (100, 100), 128, 1)
        assert [r.roi_id for r in hits] == ["roi_a", "roi_b"]
