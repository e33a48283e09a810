"""Shared test helpers: tiny on-disk WSI pyramid containers and a
Beer-Lambert two-stain image generator."""

from pathlib import Path

import numpy as np
from PIL import Image

from plaquekit.annotations import Scanner, WsiRecord, write_metadata_sidecar


def random_stain_matrix(rng, min_angle=25.0, max_angle=75.0):
    """Random 3x2 unit nonnegative stain matrix with a workable column angle."""
    from plaquekit.stain import angle_between_deg

    while True:
        m = rng.uniform(0.05, 1.0, size=(3, 2))
        m /= np.linalg.norm(m, axis=0)
        if min_angle <= angle_between_deg(m[:, 0], m[:, 1]) <= max_angle:
            if m[0, 0] > m[0, 1]:  # red-heavy column second, matches estimators
                m = m[:, ::-1].copy()
            return m


def synth_stain_image(stain_matrix, shape=(128, 128), seed=0, pure_frac=0.3,
                      conc_scale=1.0):
    """Two-stain Beer-Lambert rendering with distinct pure-pixel clusters.

    About ``pure_frac`` of the pixels carry (almost) only one stain with a
    tight concentration range, which puts the percentile-extreme angles on
    the true stain directions; the rest mix both stains well inside the cone.
    Returns (rgb_image, concentration_rows).
    """
    from plaquekit.stain import od_to_rgb

    rng = np.random.default_rng(seed)
    n = shape[0] * shape[1]
    conc = np.empty((n, 2))
    u = rng.random(n)
    pure_a = u < pure_frac
    pure_b = (u >= pure_frac) & (u < 2 * pure_frac)
    mixed = ~(pure_a | pure_b)
    conc[pure_a, 0] = rng.uniform(0.8, 1.1, pure_a.sum())
    conc[pure_a, 1] = rng.uniform(0.0, 0.005, pure_a.sum())
    conc[pure_b, 1] = rng.uniform(0.8, 1.1, pure_b.sum())
    conc[pure_b, 0] = rng.uniform(0.0, 0.005, pure_b.sum())
    conc[mixed] = rng.uniform(0.15, 0.9, (mixed.sum(), 2))
    conc *= conc_scale
    od = conc @ stain_matrix.T
    rgb = od_to_rgb(od).reshape(*shape, 3)
    return rgb, conc

RESOLUTION = {Scanner.NANOZOOMER_2RS: 227.0, Scanner.NANOZOOMER_S60: 221.0}


def box_downsample(arr: np.ndarray) -> np.ndarray:
    """Exact 2x2 box mean; dims must be even."""
    h, w = arr.shape[:2]
    blocks = arr.reshape(h // 2, 2, w // 2, 2, -1).astype(np.float64)
    return np.rint(blocks.mean(axis=(1, 3))).astype(np.uint8)


def make_container(
    level0: np.ndarray,
    root: Path,
    wsi_id: str = "wsi_a",
    scanner: Scanner = Scanner.NANOZOOMER_2RS,
    levels: int = 3,
) -> WsiRecord:
    """Write a per-level PNG pyramid + metadata sidecar; return its record."""
    assert level0.ndim == 3 and level0.shape[2] == 3
    out = Path(root) / wsi_id
    out.mkdir(parents=True, exist_ok=True)
    dims = []
    arr = level0
    for lv in range(levels):
        dims.append((arr.shape[1], arr.shape[0]))
        Image.fromarray(arr, mode="RGB").save(out / f"level_{lv:02d}.png")
        if lv + 1 < levels:
            arr = box_downsample(arr)
    wsi = WsiRecord(
        wsi_id=wsi_id,
        image_path=out,
        scanner=scanner,
        resolution_nm_per_px=RESOLUTION[scanner],
        base_magnification=40.0,
        level_count=levels,
        level_dimensions=tuple(dims),
    )
    write_metadata_sidecar(wsi, out / "metadata.txt")
    return wsi
