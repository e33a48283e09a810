"""Declarative pipeline with content-addressed, incrementally re-run stages.

A single YAML config describes the whole experiment; each stage writes its
outputs to a directory named by a digest of (stage, parameters, input
digests), so re-running with the same config touches nothing and changing
one knob rebuilds exactly the downstream stages.

Stage order: synth -> ingest -> tile -> augment -> normalize -> split ->
evaluate -> aggregate. synth, augment, and normalize only run when their
config section is present (or when invoked as the target verb).
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from collections import defaultdict
from dataclasses import dataclass, fields as dc_fields, replace
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from plaquekit import __version__
from plaquekit.annotations import (
    PolygonRoi,
    Scanner,
    WsiRecord,
    load_metadata_sidecar,
    parse_annotation_file,
)
from plaquekit.augmentation import roi_shift_variants
from plaquekit.errors import ConfigInvalid, PlaquekitError, StageFailure
from plaquekit.folds import (
    assign_patches,
    build_fold_plan,
    build_scanner_plan,
    read_plan,
    verify_plan,
    write_plan,
)
from plaquekit.metrics import (
    MetricsRecord,
    aggregate_records,
    binarize,
    emit_table,
    parse_table,
    score_split,
)
from plaquekit.stain import (
    estimate_stains_macenko,
    estimate_stains_vahadane,
    normalize_to_reference,
    write_profile,
)
from plaquekit.synthetic import SyntheticSpec, make_synthetic_cohort
from plaquekit.tiling import (
    PATCH_SIZES,
    PatchSample,
    PatchSpec,
    intersecting_rois,
    read_manifest,
    sample_patches,
    save_samples,
    working_level,
    write_manifest,
)

ENV_ARTIFACT_ROOT = "PLAQUEKIT_ARTIFACT_ROOT"
STAGE_ORDER = (
    "synth",
    "ingest",
    "tile",
    "augment",
    "normalize",
    "split",
    "evaluate",
    "aggregate",
)
OPTIONAL_STAGES = frozenset({"synth", "augment", "normalize"})

STAGE_FILENAME = "stage.json"
MANIFEST_FILENAME = "manifest.jsonl"
PLAN_FILENAME = "fold_plan.json"
ASSIGNMENT_FILENAME = "assignments.jsonl"
COHORT_FILENAME = "cohort.json"
RECORDS_FILENAME = "records.csv"
METRICS_FILENAME = "metrics.csv"

# bump to invalidate every cached artifact on a format change
_ARTIFACT_FORMAT = 1


# --- configuration -------------------------------------------------------------------


@dataclass
class PipelineConfig:
    seed: int
    artifact_root: Path | None
    cohort: Path | None
    sections: dict[str, dict]
    config_dir: Path


def _require_mapping(value, path: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigInvalid(path, "must be a mapping")
    return dict(value)


def _reject_unknown(section: dict, allowed: set[str], prefix: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigInvalid(f"{prefix}.{key}", "unknown field")


def _get_int(section, key, prefix, default, minimum):
    value = section.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigInvalid(f"{prefix}.{key}", f"must be an integer >= {minimum}")
    return value


def _get_number(section, key, prefix, default, lo=None, hi=None):
    value = section.get(key, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigInvalid(f"{prefix}.{key}", "must be a number")
    if lo is not None and value < lo:
        raise ConfigInvalid(f"{prefix}.{key}", f"must be >= {lo}")
    if hi is not None and value > hi:
        raise ConfigInvalid(f"{prefix}.{key}", f"must be <= {hi}")
    return float(value)


def _get_choice(section, key, prefix, default, choices):
    value = section.get(key, default)
    if value not in choices:
        raise ConfigInvalid(
            f"{prefix}.{key}", f"must be one of {', '.join(sorted(choices))}"
        )
    return value


def _synth_spec(section: dict, seed: int) -> SyntheticSpec:
    coerced = {}
    for key, value in section.items():
        if key == "stain_matrix" and value is not None:
            value = tuple(tuple(row) for row in value)
        elif isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return SyntheticSpec(seed=seed, **coerced)


def _validate_synth(section: dict, seed: int) -> dict:
    allowed = {f.name for f in dc_fields(SyntheticSpec)} - {"seed"}
    if "seed" in section:
        raise ConfigInvalid("synth.seed", "set the top-level seed instead")
    _reject_unknown(section, allowed, "synth")
    try:
        _synth_spec(section, seed)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid("synth", str(exc)) from exc
    return dict(section)


def _validate_tile(section: dict) -> dict:
    _reject_unknown(section, {"size", "magnification"}, "tile")
    if "size" not in section:
        raise ConfigInvalid("tile.size", "is required")
    size = section["size"]
    if not isinstance(size, int) or isinstance(size, bool) or size not in PATCH_SIZES:
        raise ConfigInvalid(
            "tile.size", f"must be one of {', '.join(str(s) for s in PATCH_SIZES)}"
        )
    return {
        "size": size,
        "magnification": _get_number(section, "magnification", "tile", 20.0, lo=1.0),
    }


def _validate_augment(section: dict) -> dict:
    _reject_unknown(section, {"margin"}, "augment")
    return {"margin": _get_int(section, "margin", "augment", 0, 0)}


def _validate_normalize(section: dict) -> dict:
    _reject_unknown(section, {"method", "reference", "sparsity_lambda"}, "normalize")
    method = _get_choice(
        section, "method", "normalize", "macenko", {"macenko", "vahadane"}
    )
    reference = section.get("reference")
    if reference is not None and not isinstance(reference, str):
        raise ConfigInvalid("normalize.reference", "must be a WSI id string")
    return {
        "method": method,
        "reference": reference,
        "sparsity_lambda": _get_number(
            section, "sparsity_lambda", "normalize", 0.1, lo=0.0
        ),
    }


def _validate_split(section: dict) -> dict:
    _reject_unknown(section, {"mode", "n_test", "n_cv", "scanner"}, "split")
    mode = _get_choice(section, "mode", "split", "nested", {"nested", "scanner_cv"})
    out = {
        "mode": mode,
        "n_test": _get_int(section, "n_test", "split", 4, 1),
        "n_cv": _get_int(section, "n_cv", "split", 3, 1),
    }
    if mode == "scanner_cv":
        scanner = section.get("scanner")
        values = [s.value for s in Scanner]
        if scanner not in values:
            raise ConfigInvalid(
                "split.scanner", f"must be one of {', '.join(values)}"
            )
        out["scanner"] = scanner
    return out


def _validate_evaluate(section: dict) -> dict:
    _reject_unknown(section, {"threshold", "granularity", "pred_dir"}, "evaluate")
    pred_dir = section.get("pred_dir")
    if pred_dir is not None and not isinstance(pred_dir, str):
        raise ConfigInvalid("evaluate.pred_dir", "must be a path string")
    return {
        "threshold": _get_number(section, "threshold", "evaluate", 0.5, lo=0.0, hi=1.0),
        "granularity": _get_choice(
            section, "granularity", "evaluate", "pooled", {"pooled", "mean"}
        ),
        "pred_dir": pred_dir,
    }


def _validate_empty(name: str):
    def validate(section: dict) -> dict:
        _reject_unknown(section, set(), name)
        return {}

    return validate


def load_config(config_path, overrides: dict | None = None) -> PipelineConfig:
    """Parse and validate a pipeline config; every error names its field path."""
    path = Path(config_path)
    if not path.is_file():
        raise ConfigInvalid("config", f"file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigInvalid("config", f"invalid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigInvalid("config", "top level must be a mapping")
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if key:
            raw.setdefault(section, {})
            if not isinstance(raw[section], dict):
                raise ConfigInvalid(section, "must be a mapping")
            raw[section][key] = value
        else:
            raw[section] = value

    known_top = {"seed", "artifact_root", "cohort", *STAGE_ORDER}
    for key in raw:
        if key not in known_top:
            raise ConfigInvalid(key, "unknown field")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigInvalid("seed", "must be a nonnegative integer")

    config_dir = path.resolve().parent

    artifact_root = raw.get("artifact_root")
    if artifact_root is not None:
        if not isinstance(artifact_root, str):
            raise ConfigInvalid("artifact_root", "must be a path string")
        artifact_root = (config_dir / artifact_root).resolve()

    cohort = raw.get("cohort")
    if cohort is not None:
        if not isinstance(cohort, str):
            raise ConfigInvalid("cohort", "must be a path string")
        cohort = (config_dir / cohort).resolve()

    validators = {
        "synth": lambda s: _validate_synth(s, seed),
        "ingest": _validate_empty("ingest"),
        "tile": _validate_tile,
        "augment": _validate_augment,
        "normalize": _validate_normalize,
        "split": _validate_split,
        "evaluate": _validate_evaluate,
        "aggregate": _validate_empty("aggregate"),
    }
    sections = {}
    for name in STAGE_ORDER:
        if name in raw:
            sections[name] = validators[name](_require_mapping(raw[name], name))
    return PipelineConfig(seed, artifact_root, cohort, sections, config_dir)


# --- artifact store -------------------------------------------------------------------


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(root) -> str:
    """Digest of a directory: sorted relative paths and their file contents."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(b"\0")
            h.update(bytes.fromhex(_file_digest(path)))
    return h.hexdigest()


def stage_digest(stage: str, params: dict, inputs: list) -> str:
    doc = {
        "format": _ARTIFACT_FORMAT,
        "stage": stage,
        "params": params,
        "inputs": inputs,
    }
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


@dataclass
class StageResult:
    stage: str
    digest: str
    out_dir: Path
    executed: bool


class ArtifactStore:
    """Digest-addressed stage directories; a stage.json marks completion."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def dir_for(self, stage: str, digest: str) -> Path:
        return self.root / f"{stage}-{digest[:12]}"

    def is_complete(self, out_dir: Path) -> bool:
        return (out_dir / STAGE_FILENAME).is_file()

    def begin(self, out_dir: Path) -> None:
        # a directory without its marker is a crashed partial build
        if out_dir.exists():
            shutil.rmtree(out_dir)
        out_dir.mkdir(parents=True)

    def finalize(self, out_dir: Path, record: dict) -> None:
        (out_dir / STAGE_FILENAME).write_text(
            json.dumps(record, indent=2, sort_keys=True) + "\n"
        )


# --- cohort plumbing ------------------------------------------------------------------


def _cohort_dir(cfg: PipelineConfig, ctx: dict) -> Path:
    if "cohort_dir" in ctx:
        return ctx["cohort_dir"]
    if cfg.cohort is None:
        raise ConfigInvalid("cohort", "is required when no synth section is configured")
    if not cfg.cohort.is_dir():
        raise StageFailure(f"ingest: cohort directory not found: {cfg.cohort}")
    return cfg.cohort


def load_cohort(ingest_dir) -> list[tuple[WsiRecord, list[PolygonRoi]]]:
    """Rehydrate (WSI record, ROI list) pairs from an ingest artifact."""
    doc = json.loads((Path(ingest_dir) / COHORT_FILENAME).read_text())
    root = Path(doc["cohort_root"])
    pairs = []
    for entry in doc["wsis"]:
        wsi = WsiRecord(
            wsi_id=entry["wsi_id"],
            image_path=root / entry["container"],
            scanner=Scanner(entry["scanner"]),
            resolution_nm_per_px=entry["resolution_nm_per_px"],
            base_magnification=entry["base_magnification"],
            level_count=entry["level_count"],
            level_dimensions=tuple(tuple(d) for d in entry["level_dimensions"]),
        )
        xml = (root / entry["annotation_file"]).read_text()
        pairs.append((wsi, parse_annotation_file(xml, wsi)))
    return pairs


# --- stage preparation (digest inputs) and execution -----------------------------------


def _prep_synth(cfg, ctx):
    return {"seed": cfg.seed, "spec": cfg.sections["synth"]}, []


def _exec_synth(cfg, ctx, out_dir):
    make_synthetic_cohort(_synth_spec(cfg.sections["synth"], cfg.seed), out_dir)


def _prep_ingest(cfg, ctx):
    if "synth_digest" in ctx:
        inputs = [["synth", ctx["synth_digest"]]]
    else:
        inputs = [["cohort-tree", tree_digest(_cohort_dir(cfg, ctx))]]
    return {}, inputs


def _exec_ingest(cfg, ctx, out_dir):
    cohort_dir = _cohort_dir(cfg, ctx)
    containers = sorted(
        p for p in cohort_dir.iterdir() if (p / "metadata.txt").is_file()
    )
    if not containers:
        raise StageFailure(f"ingest: no WSI containers under {cohort_dir}")
    entries = []
    for container in containers:
        wsi = load_metadata_sidecar(container / "metadata.txt")
        xml_path = cohort_dir / f"{wsi.wsi_id}.xml"
        if not xml_path.is_file():
            raise StageFailure(f"ingest: missing annotation file {xml_path}")
        rois = parse_annotation_file(xml_path.read_text(), wsi)
        entries.append(
            {
                "wsi_id": wsi.wsi_id,
                "scanner": wsi.scanner.value,
                "resolution_nm_per_px": wsi.resolution_nm_per_px,
                "base_magnification": wsi.base_magnification,
                "level_count": wsi.level_count,
                "level_dimensions": [list(d) for d in wsi.level_dimensions],
                "container": container.name,
                "annotation_file": xml_path.name,
                "n_rois": len(rois),
            }
        )
    doc = {"cohort_root": str(cohort_dir.resolve()), "wsis": entries}
    (out_dir / COHORT_FILENAME).write_text(json.dumps(doc, indent=2) + "\n")


def _prep_tile(cfg, ctx):
    return cfg.sections["tile"], [["ingest", ctx["ingest_digest"]]]


def _exec_tile(cfg, ctx, out_dir):
    section = cfg.sections["tile"]
    rows = []
    for wsi, rois in load_cohort(ctx["ingest_dir"]):
        level = working_level(wsi, section["magnification"])
        samples = sample_patches(wsi, rois, section["size"], level)
        rows.extend(save_samples(samples, wsi, out_dir))
    write_manifest(rows, out_dir / MANIFEST_FILENAME)


def _load_sample(manifest_dir: Path, row: dict, wsi, rois) -> PatchSample:
    """Rebuild a PatchSample from its manifest row and saved PNGs."""
    image = np.asarray(Image.open(manifest_dir / row["image_path"]))
    mask = (np.asarray(Image.open(manifest_dir / row["mask_path"])) > 0).astype(
        np.uint8
    )
    seed_roi = row["patch_id"].split("__")[1]
    spec = PatchSpec(
        row["wsi_id"],
        (row["origin_x"], row["origin_y"]),
        row["size"],
        row["level"],
        (),
    )
    lx, ly = spec.level_origin(wsi)
    hits = intersecting_rois(rois, wsi, (lx, ly), row["size"], row["level"])
    ids = [seed_roi] + [r.roi_id for r in hits if r.roi_id != seed_roi]
    spec = replace(spec, source_rois=tuple(ids))
    return PatchSample(
        spec,
        image,
        mask,
        row["context_ratio"],
        row["augmentation_tag"],
        row["normalization_tag"],
    )


def _copy_patch(src_dir: Path, out_dir: Path, row: dict) -> None:
    for key in ("image_path", "mask_path"):
        dst = out_dir / row[key]
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src_dir / row[key], dst)


def _prep_augment(cfg, ctx):
    return cfg.sections["augment"], [["manifest", ctx["manifest_digest"]]]


def _exec_augment(cfg, ctx, out_dir):
    margin = cfg.sections["augment"]["margin"]
    src = ctx["manifest_dir"]
    cohort = {wsi.wsi_id: (wsi, rois) for wsi, rois in load_cohort(ctx["ingest_dir"])}
    rows = []
    for row in read_manifest(src / MANIFEST_FILENAME):
        _copy_patch(src, out_dir, row)
        rows.append(row)
        if row["augmentation_tag"] != "none":
            continue
        wsi, rois = cohort[row["wsi_id"]]
        sample = _load_sample(src, row, wsi, rois)
        variants = roi_shift_variants(sample, wsi, rois, margin=margin)
        rows.extend(save_samples(variants, wsi, out_dir))
    write_manifest(rows, out_dir / MANIFEST_FILENAME)


def _prep_normalize(cfg, ctx):
    return cfg.sections["normalize"], [["manifest", ctx["manifest_digest"]]]


def _exec_normalize(cfg, ctx, out_dir):
    section = cfg.sections["normalize"]
    src = ctx["manifest_dir"]
    cohort = load_cohort(ctx["ingest_dir"])

    profiles = {}
    for wsi, _ in cohort:
        # the smallest pyramid level sees the whole scene, which keeps
        # percentile-based estimation robust and cheap
        level_png = Path(wsi.image_path) / f"level_{wsi.level_count - 1:02d}.png"
        image = np.asarray(Image.open(level_png))
        if section["method"] == "macenko":
            profile = estimate_stains_macenko(image)
        else:
            profile = estimate_stains_vahadane(
                image, sparsity_lambda=section["sparsity_lambda"]
            )
        profiles[wsi.wsi_id] = replace(profile, reference_id=wsi.wsi_id)

    reference_id = section["reference"] or sorted(profiles)[0]
    if reference_id not in profiles:
        raise StageFailure(f"normalize: reference {reference_id!r} not in cohort")
    reference = profiles[reference_id]

    profile_dir = out_dir / "profiles"
    profile_dir.mkdir()
    for wsi_id in sorted(profiles):
        write_profile(profiles[wsi_id], profile_dir / f"{wsi_id}.json")
    write_profile(reference, profile_dir / "reference.json")

    rows = []
    for row in read_manifest(src / MANIFEST_FILENAME):
        image = np.asarray(Image.open(src / row["image_path"]))
        normalized = normalize_to_reference(image, profiles[row["wsi_id"]], reference)
        dst = out_dir / row["image_path"]
        dst.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(normalized, mode="RGB").save(dst)
        mask_dst = out_dir / row["mask_path"]
        mask_dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src / row["mask_path"], mask_dst)
        rows.append({**row, "normalization_tag": section["method"]})
    write_manifest(rows, out_dir / MANIFEST_FILENAME)


def _prep_split(cfg, ctx):
    params = {**cfg.sections["split"], "seed": cfg.seed}
    return params, [["manifest", ctx["manifest_digest"]]]


def _exec_split(cfg, ctx, out_dir):
    section = cfg.sections["split"]
    wsis = [wsi for wsi, _ in load_cohort(ctx["ingest_dir"])]
    if section["mode"] == "nested":
        plan = build_fold_plan(
            wsis, n_test=section["n_test"], n_cv=section["n_cv"], seed=cfg.seed
        )
    else:
        plan = build_scanner_plan(
            wsis,
            Scanner(section["scanner"]),
            n_cv=section["n_cv"],
            seed=cfg.seed,
        )
    write_plan(plan, out_dir / PLAN_FILENAME)
    rows = read_manifest(ctx["manifest_dir"] / MANIFEST_FILENAME)
    assignment = assign_patches(plan, rows)
    with (out_dir / ASSIGNMENT_FILENAME).open("w") as fh:
        for entry in assignment:
            fh.write(json.dumps(entry) + "\n")
    violations = verify_plan(plan, assignment)
    if violations:
        first = violations[0]
        raise StageFailure(
            f"split: {len(violations)} leakage violations, first: "
            f"{first.rule} in {first.run} ({first.message})"
        )


def _prep_evaluate(cfg, ctx):
    section = cfg.sections["evaluate"]
    params = {"threshold": section["threshold"], "granularity": section["granularity"]}
    inputs = [
        ["manifest", ctx["manifest_digest"]],
        ["split", ctx["split_digest"]],
    ]
    if section["pred_dir"] is not None:
        pred_dir = (cfg.config_dir / section["pred_dir"]).resolve()
        if not pred_dir.is_dir():
            raise StageFailure(f"evaluate: prediction directory not found: {pred_dir}")
        inputs.append(["pred-tree", tree_digest(pred_dir)])
    return params, inputs


def _load_gt_mask(manifest_dir: Path, row: dict) -> np.ndarray:
    return (np.asarray(Image.open(manifest_dir / row["mask_path"])) > 0).astype(
        np.uint8
    )


def _load_probability(pred_dir: Path, patch_id: str) -> np.ndarray:
    path = pred_dir / f"{patch_id}.png"
    if not path.is_file():
        raise StageFailure(f"evaluate: missing prediction {path}")
    return np.asarray(Image.open(path).convert("L")).astype(np.float64) / 255.0


def _split_scores(patch_ids, row_by_id, manifest_dir, pred_dir, threshold, granularity):
    pairs = []
    for patch_id in patch_ids:
        row = row_by_id[patch_id]
        gt = _load_gt_mask(manifest_dir, row)
        if pred_dir is None:
            prob = gt.astype(np.float64)  # plumbing smoke mode: perfect predictor
        else:
            prob = _load_probability(pred_dir, patch_id)
        pairs.append((binarize(prob, threshold), gt))
    return score_split(pairs, granularity)


def run_records(
    plan,
    manifest_rows,
    manifest_dir,
    pred_dir=None,
    threshold: float = 0.5,
    granularity: str = "pooled",
    run_names=None,
) -> list[MetricsRecord]:
    """One MetricsRecord per fold run: dev scores from val, test from test."""
    manifest_dir = Path(manifest_dir)
    pred_dir = Path(pred_dir) if pred_dir is not None else None
    row_by_id = {row["patch_id"]: row for row in manifest_rows}
    pools = defaultdict(list)
    for entry in assign_patches(plan, manifest_rows):
        pools[(entry["run"], entry["split"])].append(entry["patch_id"])

    records = []
    for run in sorted(plan.runs, key=lambda r: r.name):
        if run_names is not None and run.name not in run_names:
            continue
        dev = _split_scores(
            pools[(run.name, "val")],
            row_by_id,
            manifest_dir,
            pred_dir,
            threshold,
            granularity,
        )
        test = None
        if run.test_wsis:
            test = _split_scores(
                pools[(run.name, "test")],
                row_by_id,
                manifest_dir,
                pred_dir,
                threshold,
                granularity,
            )
        records.append(
            MetricsRecord(
                run.name,
                dev["dice"],
                dev["f1"],
                dev["recall"],
                dev["precision"],
                *(
                    (test["dice"], test["f1"], test["recall"], test["precision"])
                    if test is not None
                    else (None, None, None, None)
                ),
            )
        )
    return records


def _exec_evaluate(cfg, ctx, out_dir):
    section = cfg.sections["evaluate"]
    pred_dir = None
    if section["pred_dir"] is not None:
        pred_dir = (cfg.config_dir / section["pred_dir"]).resolve()
    plan = read_plan(ctx["split_dir"] / PLAN_FILENAME)
    rows = read_manifest(ctx["manifest_dir"] / MANIFEST_FILENAME)
    records = run_records(
        plan,
        rows,
        ctx["manifest_dir"],
        pred_dir,
        section["threshold"],
        section["granularity"],
    )
    emit_table(records, aggregate_records(records), out_dir / RECORDS_FILENAME)


def _prep_aggregate(cfg, ctx):
    return {}, [["evaluate", ctx["evaluate_digest"]]]


def _exec_aggregate(cfg, ctx, out_dir):
    records, _ = parse_table(ctx["evaluate_dir"] / RECORDS_FILENAME)
    emit_table(records, aggregate_records(records), out_dir / METRICS_FILENAME)


_PREP = {
    "synth": _prep_synth,
    "ingest": _prep_ingest,
    "tile": _prep_tile,
    "augment": _prep_augment,
    "normalize": _prep_normalize,
    "split": _prep_split,
    "evaluate": _prep_evaluate,
    "aggregate": _prep_aggregate,
}
_EXEC = {
    "synth": _exec_synth,
    "ingest": _exec_ingest,
    "tile": _exec_tile,
    "augment": _exec_augment,
    "normalize": _exec_normalize,
    "split": _exec_split,
    "evaluate": _exec_evaluate,
    "aggregate": _exec_aggregate,
}

_VALIDATE_DEFAULTS = {
    "synth": lambda cfg: _validate_synth({}, cfg.seed),
    "ingest": lambda cfg: {},
    "tile": lambda cfg: _validate_tile({}),
    "augment": lambda cfg: _validate_augment({}),
    "normalize": lambda cfg: _validate_normalize({}),
    "split": lambda cfg: _validate_split({}),
    "evaluate": lambda cfg: _validate_evaluate({}),
    "aggregate": lambda cfg: {},
}


def _chain_for(upto: str, sections: dict) -> list[str]:
    chain = []
    for stage in STAGE_ORDER:
        if stage == upto or stage not in OPTIONAL_STAGES or stage in sections:
            chain.append(stage)
        if stage == upto:
            return chain
    raise ValueError(f"unknown stage {upto!r}")


def resolve_artifact_root(cfg: PipelineConfig, artifact_root=None) -> Path:
    if artifact_root is not None:
        return Path(artifact_root)
    env = os.environ.get(ENV_ARTIFACT_ROOT)
    if env:
        return Path(env)
    if cfg.artifact_root is not None:
        return cfg.artifact_root
    raise ConfigInvalid(
        "artifact_root",
        f"set via --artifact-root, ${ENV_ARTIFACT_ROOT}, or the config file",
    )


def run_pipeline(
    config_path,
    artifact_root=None,
    upto: str = "aggregate",
    overrides: dict | None = None,
) -> list[StageResult]:
    """Execute the configured stage chain up to ``upto``; cached stages are skipped."""
    if upto not in STAGE_ORDER:
        raise ValueError(f"unknown stage {upto!r}")
    cfg = load_config(config_path, overrides)
    store = ArtifactStore(resolve_artifact_root(cfg, artifact_root))
    chain = _chain_for(upto, cfg.sections)
    for stage in chain:
        if stage not in cfg.sections:
            cfg.sections[stage] = _VALIDATE_DEFAULTS[stage](cfg)
    if "ingest" in chain and "synth" not in chain and cfg.cohort is None:
        raise ConfigInvalid("cohort", "is required when no synth section is configured")

    ctx: dict = {}
    results = []
    for stage in chain:
        params, inputs = _PREP[stage](cfg, ctx)
        digest = stage_digest(stage, params, inputs)
        out_dir = store.dir_for(stage, digest)
        if store.is_complete(out_dir):
            executed = False
        else:
            store.begin(out_dir)
            try:
                _EXEC[stage](cfg, ctx, out_dir)
            except StageFailure:
                raise
            except (PlaquekitError, OSError) as exc:
                raise StageFailure(f"{stage}: {exc}") from exc
            store.finalize(
                out_dir,
                {
                    "stage": stage,
                    "digest": digest,
                    "params": params,
                    "inputs": inputs,
                    "seed": cfg.seed,
                    "tool_version": __version__,
                    "status": "ok",
                },
            )
            executed = True
        ctx[f"{stage}_dir"] = out_dir
        ctx[f"{stage}_digest"] = digest
        if stage == "synth":
            ctx["cohort_dir"] = out_dir
        if stage in ("tile", "augment", "normalize"):
            ctx["manifest_dir"] = out_dir
            ctx["manifest_digest"] = digest
        results.append(StageResult(stage, digest, out_dir, executed))
    return results


# --- standalone entry points (no artifact store) ---------------------------------------


def evaluate_single_run(
    manifest_path,
    plan_path,
    run_name: str,
    pred_dir=None,
    threshold: float = 0.5,
    granularity: str = "pooled",
) -> MetricsRecord:
    """Score one fold run from a manifest, a fold plan, and optional predictions."""
    plan = read_plan(plan_path)
    if run_name not in {r.name for r in plan.runs}:
        raise StageFailure(f"evaluate: run {run_name!r} not in fold plan")
    rows = read_manifest(manifest_path)
    records = run_records(
        plan,
        rows,
        Path(manifest_path).parent,
        pred_dir,
        threshold,
        granularity,
        run_names={run_name},
    )
    return records[0]


def aggregate_tables(inputs, out_path) -> list[MetricsRecord]:
    """Merge record rows from several score tables and emit one aggregated table."""
    records = []
    for path in inputs:
        table_records, _ = parse_table(path)
        records.extend(table_records)
    emit_table(records, aggregate_records(records), out_path)
    return records
