"""Planted-fault catalogue for the leakage verifier.

Each fault is a function mapping a clean assignment-row list to a corrupted
copy; the verifier must flag every one of them.
"""

import copy


def _find(rows, run, split, augmented=None):
    for row in rows:
        if row["run"] == run and row["split"] == split:
            if augmented is None or (row["augmentation_tag"] != "none") == augmented:
                return row
    raise AssertionError(f"no row for {run}/{split} aug={augmented}")


def _move(run, src, dst):
    def fault(rows):
        rows = copy.deepcopy(rows)
        _find(rows, run, src)["split"] = dst
        return rows

    fault.__name__ = f"move_{run}_{src}_to_{dst}"
    return fault


def _augment_in(run, split):
    def fault(rows):
        rows = copy.deepcopy(rows)
        row = copy.deepcopy(_find(rows, run, split))
        row["augmentation_tag"] = "corner_TL"
        row["patch_id"] += "__corner_TL"
        rows.append(row)
        return rows

    fault.__name__ = f"augmented_in_{run}_{split}"
    return fault


def _unknown_run(rows):
    rows = copy.deepcopy(rows)
    row = copy.deepcopy(rows[0])
    row["run"] = "test_97_cv_00"
    rows.append(row)
    return rows


def _unknown_split(rows):
    rows = copy.deepcopy(rows)
    row = copy.deepcopy(rows[0])
    row["split"] = "dev"
    rows.append(row)
    return rows


def _wsi_in_two_splits(run):
    def fault(rows):
        rows = copy.deepcopy(rows)
        row = copy.deepcopy(_find(rows, run, "train"))
        row["split"] = "val"
        rows.append(row)
        return rows

    fault.__name__ = f"wsi_two_splits_{run}"
    return fault


def _patch_in_two_splits(run):
    def fault(rows):
        rows = copy.deepcopy(rows)
        row = copy.deepcopy(_find(rows, run, "val"))
        row["split"] = "test"
        rows.append(row)
        return rows

    fault.__name__ = f"patch_two_splits_{run}"
    return fault


def _foreign_wsi(run, split):
    def fault(rows):
        rows = copy.deepcopy(rows)
        row = copy.deepcopy(_find(rows, run, split))
        row["wsi_id"] = "wsi_intruder"
        row["patch_id"] = "wsi_intruder__roi_0"
        rows.append(row)
        return rows

    fault.__name__ = f"foreign_wsi_{run}_{split}"
    return fault


def build_fault_suite():
    """Twenty independent leakage faults against a nested 12-run plan."""
    return [
        _move("test_00_cv_00", "test", "train"),
        _move("test_00_cv_00", "test", "val"),
        _move("test_00_cv_01", "train", "test"),
        _move("test_00_cv_01", "train", "val"),
        _move("test_00_cv_02", "val", "train"),
        _move("test_00_cv_02", "val", "test"),
        _move("test_01_cv_00", "test", "train"),
        _move("test_01_cv_01", "val", "test"),
        _move("test_02_cv_00", "train", "test"),
        _move("test_02_cv_02", "test", "val"),
        _move("test_03_cv_00", "val", "train"),
        _move("test_03_cv_02", "train", "val"),
        _augment_in("test_00_cv_00", "val"),
        _augment_in("test_01_cv_00", "test"),
        _augment_in("test_02_cv_01", "val"),
        _unknown_run,
        _unknown_split,
        _wsi_in_two_splits("test_00_cv_00"),
        _patch_in_two_splits("test_01_cv_02"),
        _foreign_wsi("test_03_cv_01", "train"),
    ]
