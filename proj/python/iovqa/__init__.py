"""Integer-label video quality scoring toolkit.

Thin Python surface over the C++ core: label transforms, correlation
metrics, ensembling, the warmup/cosine schedule, and the synthetic
annotator panel.
"""

from ._core import (
    EnsembleMember,
    EnsembleSpec,
    ScoreVector,
    derive_seed,
    ensemble,
    evaluate,
    final_score,
    grade_expectation,
    label_to_mos,
    lr_at,
    mos_to_label,
    parse_score_output,
    plcc,
    simulate_annotators,
    srcc,
)

__all__ = [
    "EnsembleMember",
    "EnsembleSpec",
    "ScoreVector",
    "derive_seed",
    "ensemble",
    "evaluate",
    "final_score",
    "grade_expectation",
    "label_to_mos",
    "lr_at",
    "mos_to_label",
    "parse_score_output",
    "plcc",
    "simulate_annotators",
    "srcc",
]
