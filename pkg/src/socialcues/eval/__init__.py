"""Annotation quality, detection mAP and the strategy comparison report."""
from __future__ import annotations

from .comparison import (
    ComparisonConfig,
    EvalReport,
    ReportCell,
    annotate_loaded,
    evaluate_split,
    merge_reports,
    prepare_datasets,
    run_comparison,
    test_scripts,
    training_scripts,
)
from .metrics import (
    AnnotationQuality,
    IndexMismatchError,
    NoEvaluableClassError,
    PrCurve,
    annotation_quality,
    average_precision,
    interpolated_ap,
    mean_ap,
    per_class_ap,
    sort_detections,
)

__all__ = [
    "ComparisonConfig", "EvalReport", "ReportCell", "annotate_loaded", "evaluate_split", "merge_reports",
    "prepare_datasets", "run_comparison", "test_scripts", "training_scripts",
    "AnnotationQuality", "IndexMismatchError", "NoEvaluableClassError", "PrCurve", "annotation_quality",
    "average_precision", "interpolated_ap", "mean_ap", "per_class_ap", "sort_detections",
]
