"""Pixel-wise segmentation scores, loss values, and table aggregation.

Per-run scores default to pooled confusion counts over every patch in a
split (so Dice and F1 coincide exactly); a per-patch-mean mode is available
for investigating score tables where they do not. Aggregation uses the
population standard deviation (divide by n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from plaquekit.errors import EmptyInput, IoFailure, RaggedColumns, ShapeMismatch

SCORE_COLUMNS = (
    "dev_dice",
    "dev_f1",
    "dev_recall",
    "dev_precision",
    "test_dice",
    "test_f1",
    "test_recall",
    "test_precision",
)
CSV_HEADER = "fold_name," + ",".join(SCORE_COLUMNS)
DEV_ONLY_HEADER = "fold_name," + ",".join(SCORE_COLUMNS[:4])
STAT_ROWS = ("mean", "std", "max", "min")

DEFAULT_LOSS_PARAMS = {
    "bce_weight": 0.5,
    "focal_gamma": 2.0,
    "focal_alpha": 0.25,
    "eps": 1e-7,
}


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsRecord:
    """One fold's scores; test_* stay None for runs without a test split."""

    fold_name: str
    dev_dice: float
    dev_f1: float
    dev_recall: float
    dev_precision: float
    test_dice: float | None = None
    test_f1: float | None = None
    test_recall: float | None = None
    test_precision: float | None = None

    def __post_init__(self):
        for col in SCORE_COLUMNS:
            value = getattr(self, col)
            if value is not None and not (0.0 <= value <= 1.0):
                raise ValueError(f"{self.fold_name}: {col}={value} outside [0,1]")

    def has_test(self) -> bool:
        return self.test_dice is not None


@dataclass(frozen=True)
class ColumnStats:
    mean: float
    std: float
    max: float
    min: float


@dataclass(frozen=True)
class AggregateStats:
    columns: dict[str, ColumnStats]

    def __getitem__(self, column: str) -> ColumnStats:
        return self.columns[column]


def binarize(prob_map: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map; ties (== threshold) go to foreground."""
    prob = np.asarray(prob_map)
    if prob.size and (prob.min() < 0 or prob.max() > 1):
        raise ValueError("probability map has values outside [0,1]")
    return (prob >= threshold).astype(np.uint8)


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    p = pred != 0
    g = gt != 0
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return ConfusionCounts(tp, fp, fn, tn)


def segmentation_scores(c: ConfusionCounts, smooth: float = 0.0) -> dict[str, float]:
    """Dice, F1, precision, recall from pixel counts.

    Empty-vs-empty (tp=fp=fn=0) scores 1.0 by convention so background-only
    patches do not poison averages. Dice and F1 agree exactly because both
    reduce to 2tp/(2tp+fp+fn) on the same counts.
    """
    tp, fp, fn = c.tp, c.fp, c.fn
    if tp == 0 and fp == 0 and fn == 0:
        return {"dice": 1.0, "f1": 1.0, "precision": 1.0, "recall": 1.0}

    def ratio(num: float, den: float) -> float:
        if den == 0:
            return 1.0 if num == 0 else 0.0
        return num / den

    precision = ratio(tp + smooth, tp + fp + smooth)
    recall = ratio(tp + smooth, tp + fn + smooth)
    dice = (2 * tp + smooth) / (2 * tp + fp + fn + smooth)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    if smooth == 0:
        # harmonic mean of tp/(tp+fp) and tp/(tp+fn) is exactly 2tp/(2tp+fp+fn)
        f1 = dice
    return {"dice": dice, "f1": f1, "precision": precision, "recall": recall}


def score_split(
    pairs: Iterable[tuple[np.ndarray, np.ndarray]], granularity: str = "pooled"
) -> dict[str, float]:
    """Scores over a collection of (pred, gt) mask pairs.

    ``pooled`` sums confusion counts over all patches before scoring (Dice
    equals F1 exactly); ``mean`` averages per-patch scores instead.
    """
    if granularity == "pooled":
        total = ConfusionCounts(0, 0, 0, 0)
        seen = False
        for pred, gt in pairs:
            total = total + confusion_counts(pred, gt)
            seen = True
        if not seen:
            raise EmptyInput("no mask pairs to score")
        return segmentation_scores(total)
    if granularity == "mean":
        acc: dict[str, float] = {}
        n = 0
        for pred, gt in pairs:
            scores = segmentation_scores(confusion_counts(pred, gt))
            for k, v in scores.items():
                acc[k] = acc.get(k, 0.0) + v
            n += 1
        if n == 0:
            raise EmptyInput("no mask pairs to score")
        return {k: v / n for k, v in acc.items()}
    raise ValueError(f"unknown granularity {granularity!r}")


def loss_value(
    kind: str,
    prob_map: np.ndarray,
    gt: np.ndarray,
    params: dict | None = None,
) -> float:
    """Scalar training-loss value of a probability map against a binary mask."""
    prob = np.asarray(prob_map, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if prob.shape != gt.shape:
        raise ShapeMismatch(f"prob {prob.shape} vs gt {gt.shape}")
    p = dict(DEFAULT_LOSS_PARAMS)
    if params:
        p.update(params)
    eps = p["eps"]
    clamped = np.clip(prob, eps, 1.0 - eps)

    if kind == "bce":
        return float(-np.mean(gt * np.log(clamped) + (1 - gt) * np.log(1 - clamped)))
    if kind == "dice_loss":
        num = 2.0 * float((prob * gt).sum()) + eps
        den = float(prob.sum()) + float(gt.sum()) + eps
        return 1.0 - num / den
    if kind == "bce_dice":
        w = p["bce_weight"]
        return w * loss_value("bce", prob_map, gt, params) + (1.0 - w) * loss_value(
            "dice_loss", prob_map, gt, params
        )
    if kind == "focal":
        p_t = np.where(gt > 0, clamped, 1.0 - clamped)
        return float(
            np.mean(-p["focal_alpha"] * (1.0 - p_t) ** p["focal_gamma"] * np.log(p_t))
        )
    raise ValueError(f"unknown loss kind {kind!r}")


def aggregate_records(records: Sequence[MetricsRecord]) -> AggregateStats:
    """Per-column mean, population std, max, min over fold records."""
    if not records:
        raise EmptyInput("no records to aggregate")
    has_test = records[0].has_test()
    if any(r.has_test() != has_test for r in records):
        raise RaggedColumns("records mix test-split presence")
    columns = SCORE_COLUMNS if has_test else SCORE_COLUMNS[:4]
    stats = {}
    for col in columns:
        values = np.array([getattr(r, col) for r in records], dtype=np.float64)
        stats[col] = ColumnStats(
            mean=float(values.mean()),
            std=float(values.std()),  # population convention (divide by n)
            max=float(values.max()),
            min=float(values.min()),
        )
    return AggregateStats(stats)


# --- CSV emit / parse -----------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.4f}"


def emit_table(
    records: Sequence[MetricsRecord], stats: AggregateStats, path: Path
) -> None:
    """Write the per-fold score table with trailing mean/std/max/min rows.

    Columns shrink to dev_* only when the records carry no test split.
    """
    if not records:
        raise EmptyInput("no records to emit")
    has_test = records[0].has_test()
    columns = SCORE_COLUMNS if has_test else SCORE_COLUMNS[:4]
    header = CSV_HEADER if has_test else DEV_ONLY_HEADER
    lines = [header]
    for r in sorted(records, key=lambda r: r.fold_name):
        lines.append(",".join([r.fold_name] + [_fmt(getattr(r, c)) for c in columns]))
    for stat in STAT_ROWS:
        lines.append(
            ",".join([stat] + [_fmt(getattr(stats[c], stat)) for c in columns])
        )
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write table {path}: {exc}") from exc


def parse_table(path: Path) -> tuple[list[MetricsRecord], AggregateStats]:
    """Inverse of :func:`emit_table` (to the printed 4 decimals)."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read table {path}: {exc}") from exc
    if not lines:
        raise EmptyInput(f"empty table {path}")
    header = lines[0]
    if header == CSV_HEADER:
        columns = SCORE_COLUMNS
    elif header == DEV_ONLY_HEADER:
        columns = SCORE_COLUMNS[:4]
    else:
        raise RaggedColumns(f"unexpected header {header!r}")
    records = []
    stat_values: dict[str, list[float]] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        name, *cells = line.split(",")
        values = [float(c) if c != "" else None for c in cells]
        if len(values) != len(columns):
            raise RaggedColumns(f"row {name!r} has {len(values)} cells")
        if name in STAT_ROWS:
            stat_values[name] = values
        else:
            records.append(MetricsRecord(name, **dict(zip(columns, values))))
    stats = AggregateStats(
        {
            col: ColumnStats(
                *(stat_values[stat][i] for stat in STAT_ROWS)
            )
            for i, col in enumerate(columns)
        }
    )
    return records, stats
