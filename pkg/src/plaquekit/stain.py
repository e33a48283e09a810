"""Stain estimation and normalization.

Pixels are converted to optical density (Beer-Lambert), where the two stains
mix linearly: od = stain_matrix @ concentrations. Two estimators recover the
3x2 stain matrix from an image: the SVD-percentile method (svd plane + extreme
angles) and sparse non-negative dictionary learning. Normalization re-expresses
an image's concentrations through a reference profile.

Concentration solving uses an exact closed-form 2-variable non-negative
least-squares (optionally l1-penalized): with only two stains the KKT active
sets can be enumerated, so no iterative solver is needed and the dictionary-
learning objective is provably non-increasing per block update.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from plaquekit.errors import (
    DegenerateStains,
    InsufficientTissue,
    MethodMismatch,
    NoConvergenceWarning,
)

STAIN_METHODS = ("macenko", "vahadane")
MIN_STAIN_ANGLE_DEG = 5.0
MIN_TISSUE_PIXELS = 100

#: Widely used hematoxylin / DAB unit OD colors, fallback dictionary init.
CANONICAL_H_DAB = np.array(
    [[0.650, 0.269], [0.704, 0.568], [0.286, 0.778]], dtype=np.float64
)


def angle_between_deg(u: np.ndarray, v: np.ndarray) -> float:
    """Angle between two vectors in degrees."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cosine = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.degrees(math.acos(min(1.0, max(-1.0, cosine))))


@dataclass
class StainProfile:
    """Estimated stain basis: unit OD columns plus concentration scale.

    ``converged`` and ``objective_trace`` are solver diagnostics; they are
    not persisted by :func:`write_profile`.
    """

    method: str
    stain_matrix: np.ndarray
    max_concentrations: np.ndarray
    reference_id: str | None = None
    converged: bool = True
    objective_trace: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.method not in STAIN_METHODS:
            raise ValueError(f"unknown stain method {self.method!r}")
        matrix = np.asarray(self.stain_matrix, dtype=np.float64)
        if matrix.shape != (3, 2):
            raise ValueError(f"stain_matrix must be 3x2, got {matrix.shape}")
        if (matrix < -1e-9).any():
            raise ValueError("stain_matrix entries must be nonnegative")
        matrix = np.maximum(matrix, 0.0)
        norms = np.linalg.norm(matrix, axis=0)
        if (norms < 1e-9).any():
            raise DegenerateStains("stain column with zero norm")
        matrix = matrix / norms
        self.stain_matrix = matrix
        if angle_between_deg(matrix[:, 0], matrix[:, 1]) < MIN_STAIN_ANGLE_DEG:
            raise DegenerateStains(
                f"stain columns closer than {MIN_STAIN_ANGLE_DEG} degrees"
            )
        maxc = np.asarray(self.max_concentrations, dtype=np.float64).reshape(2)
        if (maxc <= 0).any():
            raise ValueError("max_concentrations must be positive")
        self.max_concentrations = maxc


def write_profile(profile: StainProfile, path: Path) -> None:
    doc = {
        "method": profile.method,
        "stain_matrix": [[float(x) for x in row] for row in profile.stain_matrix],
        "max_concentrations": [float(x) for x in profile.max_concentrations],
        "reference_id": profile.reference_id,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_profile(path: Path) -> StainProfile:
    doc = json.loads(Path(path).read_text())
    return StainProfile(
        method=doc["method"],
        stain_matrix=np.asarray(doc["stain_matrix"], dtype=np.float64),
        max_concentrations=np.asarray(doc["max_concentrations"], dtype=np.float64),
        reference_id=doc.get("reference_id"),
    )


# --- optical density ---------------------------------------------------------


def rgb_to_od(image: np.ndarray, io: float = 255.0) -> np.ndarray:
    """Per-channel optical density, clamped at 0.

    The +1 offset keeps pure black finite; it is invisible at 8-bit precision.
    """
    arr = np.asarray(image, dtype=np.float64)
    od = -np.log10((arr + 1.0) / io)
    return np.maximum(od, 0.0)


def od_to_rgb(od: np.ndarray, io: float = 255.0) -> np.ndarray:
    """Inverse of :func:`rgb_to_od`, rounded into 8-bit range."""
    od = np.asarray(od, dtype=np.float64)
    return np.clip(np.rint(io * np.power(10.0, -od) - 1.0), 0, 255).astype(np.uint8)


# --- exact two-stain solver ---------------------------------------------------


def _nnls2(od_rows: np.ndarray, matrix: np.ndarray, l1: float = 0.0) -> np.ndarray:
    """Exact per-row argmin of ||od - matrix @ c||^2 + l1*(c1+c2), c >= 0.

    With two columns the nonnegative orthant has only three candidate
    optima: the unconstrained stationary point (if feasible) and the two
    single-axis minimizers. All are closed-form, so the result is the exact
    constrained minimum, vectorized over rows.
    """
    x = np.asarray(od_rows, dtype=np.float64)
    g = matrix.T @ matrix
    g11, g22, g12 = g[0, 0], g[1, 1], g[0, 1]
    b = x @ matrix - l1 / 2.0  # (n, 2)
    det = g11 * g22 - g12 * g12
    if det <= 1e-12 * g11 * g22:
        raise DegenerateStains("stain columns are numerically collinear")

    c1_full = (g22 * b[:, 0] - g12 * b[:, 1]) / det
    c2_full = (g11 * b[:, 1] - g12 * b[:, 0]) / det
    full = np.stack([c1_full, c2_full], axis=1)
    axis1 = np.stack([np.maximum(b[:, 0], 0.0) / g11, np.zeros(len(x))], axis=1)
    axis2 = np.stack([np.zeros(len(x)), np.maximum(b[:, 1], 0.0) / g22], axis=1)

    def gain(c):
        # 2 b.c - c^T g c, larger is better; constant terms dropped
        quad = (
            g11 * c[:, 0] ** 2 + 2 * g12 * c[:, 0] * c[:, 1] + g22 * c[:, 1] ** 2
        )
        return 2.0 * (b * c).sum(axis=1) - quad

    feasible = (full >= 0.0).all(axis=1)
    gain_full = np.where(feasible, gain(full), -np.inf)
    gain_axis1 = gain(axis1)
    gain_axis2 = gain(axis2)
    best = np.argmax(np.stack([gain_full, gain_axis1, gain_axis2], axis=1), axis=1)
    out = np.where(
        best[:, None] == 0, full, np.where(best[:, None] == 1, axis1, axis2)
    )
    return np.maximum(out, 0.0)


def concentrations(od: np.ndarray, profile: StainProfile) -> np.ndarray:
    """Per-pixel nonnegative least-squares stain concentrations.

    Accepts (..., 3) OD arrays; returns matching (..., 2).
    """
    od = np.asarray(od, dtype=np.float64)
    lead = od.shape[:-1]
    out = _nnls2(od.reshape(-1, 3), profile.stain_matrix, l1=0.0)
    return out.reshape(*lead, 2)


def _tissue_rows(image: np.ndarray, beta: float) -> np.ndarray:
    od = rgb_to_od(image).reshape(-1, 3)
    tissue = od[np.linalg.norm(od, axis=1) > beta]
    if len(tissue) < MIN_TISSUE_PIXELS:
        raise InsufficientTissue(
            f"{len(tissue)} tissue pixels above OD {beta}, need {MIN_TISSUE_PIXELS}"
        )
    return tissue


def _order_columns(matrix: np.ndarray) -> np.ndarray:
    """Deterministic stain identity: larger red-channel OD goes second."""
    if matrix[0, 0] > matrix[0, 1]:
        return matrix[:, ::-1].copy()
    return matrix


def _percentile_maxc(tissue_od: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    conc = _nnls2(tissue_od, matrix, l1=0.0)
    maxc = np.percentile(conc, 99, axis=0)
    if (maxc <= 0).any():
        raise DegenerateStains("99th-percentile concentration is zero")
    return maxc


# --- estimators ---------------------------------------------------------------


def estimate_stains_macenko(
    image: np.ndarray, beta: float = 0.15, alpha: float = 1.0
) -> StainProfile:
    """SVD-percentile stain estimation.

    Projects tissue OD onto its top-2 singular plane, takes the ``alpha`` and
    ``100 - alpha`` percentile angles as the extreme stain directions, and
    maps them back to unit nonnegative OD colors.
    """
    tissue = _tissue_rows(image, beta)
    scatter = tissue.T @ tissue
    _, eigvecs = np.linalg.eigh(scatter)
    basis = eigvecs[:, ::-1][:, :2]  # dominant direction first
    if (tissue @ basis[:, 0]).mean() < 0:
        basis[:, 0] = -basis[:, 0]
    proj = tissue @ basis
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(phi, [alpha, 100.0 - alpha])

    def direction(angle: float) -> np.ndarray:
        v = basis @ np.array([math.cos(angle), math.sin(angle)])
        if v.sum() < 0:
            v = -v
        v = np.maximum(v, 0.0)
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            raise DegenerateStains("extreme direction collapsed to zero")
        return v / norm

    v_lo, v_hi = direction(lo), direction(hi)
    if angle_between_deg(v_lo, v_hi) < MIN_STAIN_ANGLE_DEG:
        raise DegenerateStains(
            f"extreme angles within {MIN_STAIN_ANGLE_DEG} degrees; single stain?"
        )
    matrix = _order_columns(np.stack([v_lo, v_hi], axis=1))
    return StainProfile("macenko", matrix, _percentile_maxc(tissue, matrix))


def _subsample_rows(rows: np.ndarray, limit: int) -> np.ndarray:
    """Order-independent subsample: lexsort rows, take a fixed stride."""
    if len(rows) <= limit:
        order = np.lexsort(rows.T)
        return rows[order]
    order = np.lexsort(rows.T)
    stride = -(-len(rows) // limit)
    return rows[order][::stride]


def estimate_stains_vahadane(
    image: np.ndarray,
    sparsity_lambda: float = 0.1,
    n_iter: int = 200,
    tol: float = 1e-6,
    beta: float = 0.15,
    subsample: int = 10000,
) -> StainProfile:
    """Sparse non-negative dictionary learning of the stain matrix.

    Alternates an exact per-pixel concentration step (closed-form 2-variable
    nonnegative lasso) with an exact per-column dictionary step (projection
    of the residual correlation onto the nonnegative unit sphere), so the
    objective ||OD - D C||_F^2 + lambda ||C||_1 never increases. Emits
    :class:`NoConvergenceWarning` when the relative objective change is still
    above ``tol`` after ``n_iter`` iterations; the profile is returned anyway.
    """
    tissue = _tissue_rows(image, beta)
    x = _subsample_rows(tissue, subsample)
    try:
        matrix = estimate_stains_macenko(image, beta=beta).stain_matrix.copy()
    except (DegenerateStains, InsufficientTissue):
        matrix = CANONICAL_H_DAB / np.linalg.norm(CANONICAL_H_DAB, axis=0)

    trace: list[float] = []
    conc = np.zeros((len(x), 2))
    converged = False
    for _ in range(n_iter):
        conc = _nnls2(x, matrix, l1=sparsity_lambda)
        for j in (0, 1):
            k = 1 - j
            r = x.T @ conc[:, j] - matrix[:, k] * float(conc[:, k] @ conc[:, j])
            pos = np.maximum(r, 0.0)
            norm = np.linalg.norm(pos)
            if norm > 1e-12:
                matrix[:, j] = pos / norm
        resid = x - conc @ matrix.T
        obj = float((resid * resid).sum() + sparsity_lambda * conc.sum())
        trace.append(obj)
        if len(trace) >= 2:
            prev = trace[-2]
            if prev - obj <= tol * max(prev, 1e-12):
                converged = True
                break
    if not converged:
        warnings.warn(
            f"dictionary learning still improving after {n_iter} iterations",
            NoConvergenceWarning,
        )
    matrix = _order_columns(matrix)
    return StainProfile(
        "vahadane",
        matrix,
        _percentile_maxc(tissue, matrix),
        converged=converged,
        objective_trace=tuple(trace),
    )


# --- normalization ------------------------------------------------------------


def normalize_to_reference(
    image: np.ndarray, source: StainProfile, reference: StainProfile
) -> np.ndarray:
    """Re-express ``image`` in the reference stain basis.

    Concentrations are solved under the source profile, scaled channel-wise
    by the ratio of 99th-percentile concentrations, and re-synthesized
    through the reference stain matrix.
    """
    if source.method != reference.method:
        raise MethodMismatch(
            f"source profile is {source.method}, reference is {reference.method}"
        )
    od = rgb_to_od(image)
    conc = concentrations(od, source)
    scale = reference.max_concentrations / source.max_concentrations
    od_out = (conc * scale) @ reference.stain_matrix.T
    return od_to_rgb(od_out)
