"""Histopathology patch-extraction and evaluation toolkit."""

__version__ = "0.1.0"

_EXPORTS = {
    "PolygonRoi": "plaquekit.annotations",
    "WsiRecord": "plaquekit.annotations",
    "Scanner": "plaquekit.annotations",
    "FoldPlan": "plaquekit.folds",
    "RunSpec": "plaquekit.folds",
    "AggregateStats": "plaquekit.metrics",
    "ConfusionCounts": "plaquekit.metrics",
    "MetricsRecord": "plaquekit.metrics",
    "StainProfile": "plaquekit.stain",
    "PipelineConfig": "plaquekit.pipeline",
    "StageResult": "plaquekit.pipeline",
    "load_config": "plaquekit.pipeline",
    "run_pipeline": "plaquekit.pipeline",
    "PatchSample": "plaquekit.tiling",
    "PatchSpec": "plaquekit.tiling",
    "SyntheticSpec": "plaquekit.synthetic",
    "make_synthetic_cohort": "plaquekit.synthetic",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name):
    module = _EXPORTS.get(name)
    if module is None:
        raise AttributeError(f"module 'plaquekit' has no attribute {name!r}")
    import importlib

    return getattr(importlib.import_module(module), name)
