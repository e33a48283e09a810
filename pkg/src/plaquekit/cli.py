"""Command-line front end: stage verbs, full runs, and standalone scoring.

Exit codes: 0 on success, 2 for configuration errors, 3 for stage failures
and other toolkit errors.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

from plaquekit import __version__
from plaquekit.errors import ConfigInvalid, PlaquekitError
from plaquekit.metrics import aggregate_records, emit_table
from plaquekit.pipeline import (
    ENV_ARTIFACT_ROOT,
    STAGE_ORDER,
    aggregate_tables,
    evaluate_single_run,
    run_pipeline,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config YAML")
    parser.add_argument(
        "--artifact-root",
        help=f"artifact store directory (default: ${ENV_ARTIFACT_ROOT} or config)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plaquekit",
        description="Patch extraction, fold planning, and scoring for WSI cohorts.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="execute the full configured stage chain")
    _add_common(run)

    for stage in STAGE_ORDER:
        if stage in ("evaluate", "aggregate"):
            continue
        stage_parser = sub.add_parser(
            stage, help=f"execute stages up to and including {stage}"
        )
        _add_common(stage_parser)

    evaluate = sub.add_parser(
        "evaluate",
        help="score predictions (pipeline stage, or standalone with --manifest)",
    )
    _add_common(evaluate)
    evaluate.add_argument("--pred-dir", help="directory of <patch_id>.png probability maps")
    evaluate.add_argument("--manifest", help="patch manifest (standalone mode)")
    evaluate.add_argument("--fold-plan", help="fold plan JSON (standalone mode)")
    evaluate.add_argument("--run", dest="run_name", help="fold run name (standalone mode)")
    evaluate.add_argument("--threshold", type=float, help="binarization threshold")
    evaluate.add_argument(
        "--granularity", choices=("pooled", "mean"), help="score pooling granularity"
    )
    evaluate.add_argument("--out", help="write the score table here (standalone mode)")

    aggregate = sub.add_parser(
        "aggregate",
        help="merge score tables (pipeline stage, or standalone with --in)",
    )
    _add_common(aggregate)
    aggregate.add_argument(
        "--in", dest="inputs", nargs="+", help="score tables to merge (standalone mode)"
    )
    aggregate.add_argument("--out", help="write the merged table here")

    return parser


def _require(args, attr: str, flag: str):
    value = getattr(args, attr, None)
    if value is None:
        raise ConfigInvalid(flag, "is required")
    return value


def _print_records(records) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "table.csv"
        emit_table(records, aggregate_records(records), path)
        sys.stdout.write(path.read_text())


def _evaluate_standalone(args) -> int:
    plan_path = _require(args, "fold_plan", "--fold-plan")
    run_name = _require(args, "run_name", "--run")
    record = evaluate_single_run(
        args.manifest,
        plan_path,
        run_name,
        pred_dir=args.pred_dir,
        threshold=args.threshold if args.threshold is not None else 0.5,
        granularity=args.granularity or "pooled",
    )
    if args.out:
        emit_table([record], aggregate_records([record]), args.out)
        print(f"wrote {args.out}")
    else:
        _print_records([record])
    return EXIT_OK


def _aggregate_standalone(args) -> int:
    out = _require(args, "out", "--out")
    records = aggregate_tables(args.inputs, out)
    print(f"wrote {out} ({len(records)} fold rows)")
    return EXIT_OK


def _pipeline_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "pred_dir", None) is not None:
        overrides["evaluate.pred_dir"] = args.pred_dir
    if getattr(args, "threshold", None) is not None:
        overrides["evaluate.threshold"] = args.threshold
    if getattr(args, "granularity", None) is not None:
        overrides["evaluate.granularity"] = args.granularity
    return overrides


def _run_stages(args, upto: str) -> int:
    config = _require(args, "config", "--config")
    results = run_pipeline(
        config,
        artifact_root=args.artifact_root,
        upto=upto,
        overrides=_pipeline_overrides(args),
    )
    for result in results:
        verb = "built " if result.executed else "cached"
        print(f"{verb} {result.stage:<9} {result.out_dir}")
    return EXIT_OK


def _dispatch(args) -> int:
    if args.verb == "evaluate" and args.manifest is not None:
        return _evaluate_standalone(args)
    if args.verb == "aggregate" and args.inputs is not None:
        return _aggregate_standalone(args)
    upto = "aggregate" if args.verb == "run" else args.verb
    return _run_stages(args, upto)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlaquekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
