"""Pseudo-label quality, recovery error, AP and the ablation protocol."""
from .metrics import (
    DIFFICULTY_ORDER,
    RECALL_IOU,
    AlignmentError,
    Detection,
    GroundTruth,
    MatchResult,
    ap_table,
    average_precision,
    interpolated_ap,
    label_quality,
    match_objects,
    quality_from_matches,
    recovery_error,
)
from .report import (
    ABLATION_VARIANTS,
    EvalReport,
    ablation_run,
    ablation_table,
    align_label_dirs,
    canonical_calibration,
    evaluate_label_dirs,
    evaluate_model,
    recovery_pass,
    report_table,
)
