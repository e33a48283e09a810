"""WSI-level cross-testing / cross-validation fold plans and leakage checks.

Splitting always happens at whole-slide granularity: patches inherit their
slide's split, so disjoint WSI sets imply patch-level disjointness. Plans are
a pure function of (cohort ids, mode, seed).
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from plaquekit.annotations import Scanner, WsiRecord
from plaquekit.errors import EmptyCohort, IndivisibleCohort

RUN_NAME_RE = re.compile(r"^test_\d\d_cv_\d\d$")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class RunSpec:
    """One train/val/test assignment of the cohort."""

    name: str
    test_wsis: tuple[str, ...]
    val_wsis: tuple[str, ...]
    train_wsis: tuple[str, ...]
    augment_splits: frozenset[str] = frozenset({"train"})

    def __post_init__(self):
        if not RUN_NAME_RE.match(self.name):
            raise ValueError(f"run name {self.name!r} must match test_XX_cv_YY")
        groups = (set(self.test_wsis), set(self.val_wsis), set(self.train_wsis))
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = groups[i] & groups[j]
                if overlap:
                    raise ValueError(
                        f"{self.name}: {sorted(overlap)} in two splits"
                    )
        unknown = self.augment_splits - set(SPLITS)
        if unknown:
            raise ValueError(f"{self.name}: unknown augment splits {sorted(unknown)}")

    def split_of(self, wsi_id: str) -> str | None:
        if wsi_id in self.test_wsis:
            return "test"
        if wsi_id in self.val_wsis:
            return "val"
        if wsi_id in self.train_wsis:
            return "train"
        return None

    def wsis_of(self, split: str) -> tuple[str, ...]:
        return {"test": self.test_wsis, "val": self.val_wsis, "train": self.train_wsis}[
            split
        ]


@dataclass(frozen=True)
class FoldPlan:
    mode: str  # "nested" | "scanner_cv"
    runs: tuple[RunSpec, ...]
    seed: int

    def __post_init__(self):
        if self.mode not in ("nested", "scanner_cv"):
            raise ValueError(f"unknown fold-plan mode {self.mode!r}")
        names = [r.name for r in self.runs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate run names in plan")

    def run(self, name: str) -> RunSpec:
        for r in self.runs:
            if r.name == name:
                return r
        raise KeyError(f"run {name!r} not in plan")


def _cohort_ids(wsis: Sequence) -> list[str]:
    ids = [w.wsi_id if isinstance(w, WsiRecord) else str(w) for w in wsis]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate wsi ids in cohort")
    return ids


def _shuffled(ids: list[str], seed: int) -> list[str]:
    ordered = sorted(ids)
    random.Random(seed).shuffle(ordered)
    return ordered


def _chunks(items: list[str], n_groups: int) -> list[list[str]]:
    size = len(items) // n_groups
    return [items[i * size : (i + 1) * size] for i in range(n_groups)]


def build_fold_plan(
    wsis: Sequence, n_test: int = 4, n_cv: int = 3, seed: int = 0
) -> FoldPlan:
    """Nested cross-testing plan: ``n_test`` outer test groups, and for each,
    ``n_cv`` validation rotations over the remaining slides.

    Runs are named test_{t:02d}_cv_{v:02d}; each holds its test group, one
    validation group, and everything else as training.
    """
    ids = _cohort_ids(wsis)
    if not ids:
        raise EmptyCohort("no WSIs to split")
    if len(ids) % n_test != 0:
        raise IndivisibleCohort(
            f"{len(ids)} WSIs do not divide into {n_test} equal test groups"
        )
    remaining_size = len(ids) - len(ids) // n_test
    if remaining_size % n_cv != 0 or remaining_size == 0:
        raise IndivisibleCohort(
            f"{remaining_size} remaining WSIs do not divide into {n_cv} "
            "equal validation groups"
        )
    order = _shuffled(ids, seed)
    test_groups = _chunks(order, n_test)
    runs = []
    for t, test_group in enumerate(test_groups):
        remaining = [w for w in order if w not in test_group]
        for v, val_group in enumerate(_chunks(remaining, n_cv)):
            train = tuple(w for w in remaining if w not in val_group)
            runs.append(
                RunSpec(
                    name=f"test_{t:02d}_cv_{v:02d}",
                    test_wsis=tuple(test_group),
                    val_wsis=tuple(val_group),
                    train_wsis=train,
                )
            )
    return FoldPlan("nested", tuple(runs), seed)


def build_scanner_plan(
    wsis: Sequence[WsiRecord], scanner: Scanner, n_cv: int = 4, seed: int = 0
) -> FoldPlan:
    """Per-scanner cross-validation: no test split, validation rotates."""
    scanner = Scanner(scanner)
    cohort = [w for w in wsis if w.scanner == scanner]
    if not cohort:
        raise EmptyCohort(f"no WSIs from scanner {scanner.value}")
    ids = _cohort_ids(cohort)
    if len(ids) % n_cv != 0:
        raise IndivisibleCohort(
            f"{len(ids)} {scanner.value} WSIs do not divide into {n_cv} folds"
        )
    order = _shuffled(ids, seed)
    runs = []
    for v, val_group in enumerate(_chunks(order, n_cv)):
        train = tuple(w for w in order if w not in val_group)
        runs.append(
            RunSpec(
                name=f"test_00_cv_{v:02d}",
                test_wsis=(),
                val_wsis=tuple(val_group),
                train_wsis=train,
            )
        )
    return FoldPlan("scanner_cv", tuple(runs), seed)


# --- assignment + verification -------------------------------------------------


def assign_patches(plan: FoldPlan, manifest_rows: Iterable[dict]) -> list[dict]:
    """Materialize the per-run split assignment of manifest rows.

    Each output row carries {run, split, patch_id, wsi_id, augmentation_tag}.
    Augmented patches are assigned only where the run's augment_splits allow;
    rows from WSIs outside a run's cohort are skipped for that run.
    """
    rows = list(manifest_rows)
    out = []
    for run in plan.runs:
        for row in rows:
            split = run.split_of(row["wsi_id"])
            if split is None:
                continue
            if row.get("augmentation_tag", "none") != "none" and (
                split not in run.augment_splits
            ):
                continue
            out.append(
                {
                    "run": run.name,
                    "split": split,
                    "patch_id": row["patch_id"],
                    "wsi_id": row["wsi_id"],
                    "augmentation_tag": row.get("augmentation_tag", "none"),
                }
            )
    return out


@dataclass(frozen=True)
class Violation:
    rule: str
    run: str
    wsi_id: str
    patch_id: str
    message: str


def verify_plan(plan: FoldPlan, assignment_rows: Iterable[dict]) -> list[Violation]:
    """Leakage check over materialized assignment rows.

    Violations are data, not exceptions; an empty list means the assignment
    is consistent with the plan.
    """
    violations: list[Violation] = []
    runs = {r.name: r for r in plan.runs}
    seen_wsi_splits: dict[tuple[str, str], set[str]] = {}
    seen_patch_splits: dict[tuple[str, str], set[str]] = {}
    for row in assignment_rows:
        run_name = row.get("run", "")
        wsi_id = row.get("wsi_id", "")
        patch_id = row.get("patch_id", "")
        split = row.get("split", "")
        run = runs.get(run_name)
        if run is None:
            violations.append(
                Violation(
                    "unknown_run", run_name, wsi_id, patch_id,
                    f"assignment references run {run_name!r} not in the plan",
                )
            )
            continue
        if split not in SPLITS:
            violations.append(
                Violation(
                    "unknown_split", run_name, wsi_id, patch_id,
                    f"unknown split {split!r}",
                )
            )
            continue
        claimed = run.split_of(wsi_id)
        if claimed != split:
            violations.append(
                Violation(
                    "wrong_split", run_name, wsi_id, patch_id,
                    f"wsi {wsi_id} belongs to split {claimed!r} of {run_name}, "
                    f"found in {split!r}",
                )
            )
        if row.get("augmentation_tag", "none") != "none" and (
            split not in run.augment_splits
        ):
            violations.append(
                Violation(
                    "augmented_outside_allowed", run_name, wsi_id, patch_id,
                    f"augmented patch in split {split!r}, allowed only in "
                    f"{sorted(run.augment_splits)}",
                )
            )
        seen_wsi_splits.setdefault((run_name, wsi_id), set()).add(split)
        seen_patch_splits.setdefault((run_name, patch_id), set()).add(split)
    for (run_name, wsi_id), splits in sorted(seen_wsi_splits.items()):
        if len(splits) > 1:
            violations.append(
                Violation(
                    "wsi_in_two_splits", run_name, wsi_id, "",
                    f"wsi {wsi_id} appears in splits {sorted(splits)} of {run_name}",
                )
            )
    for (run_name, patch_id), splits in sorted(seen_patch_splits.items()):
        if len(splits) > 1:
            violations.append(
                Violation(
                    "patch_in_two_splits", run_name, "", patch_id,
                    f"patch {patch_id} appears in splits {sorted(splits)} of "
                    f"{run_name}",
                )
            )
    return violations


# --- persistence ----------------------------------------------------------------


def write_plan(plan: FoldPlan, path: Path) -> None:
    doc = {
        "mode": plan.mode,
        "seed": plan.seed,
        "runs": [
            {
                "name": r.name,
                "test": list(r.test_wsis),
                "val": list(r.val_wsis),
                "train": list(r.train_wsis),
                "augment_splits": sorted(r.augment_splits),
            }
            for r in plan.runs
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_plan(path: Path) -> FoldPlan:
    doc = json.loads(Path(path).read_text())
    runs = tuple(
        RunSpec(
            name=r["name"],
            test_wsis=tuple(r["test"]),
            val_wsis=tuple(r["val"]),
            train_wsis=tuple(r["train"]),
            augment_splits=frozenset(r["augment_splits"]),
        )
        for r in doc["runs"]
    )
    return FoldPlan(doc["mode"], runs, doc["seed"])
