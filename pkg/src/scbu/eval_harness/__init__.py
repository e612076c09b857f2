"""Metrics, evaluation protocols, group statistics and synthetic fixtures."""
from .dataset import Case, load_dataset, save_dataset
from .metrics import ConfusionCounts, Metrics, compute_metrics, metrics
from .protocols import (
    CaseRow,
    EnsembleConfig,
    EvalReport,
    PipelineConfig,
    build_case_script,
    case_measures,
    evaluate_cases,
    fewshot_run,
    fewshot_split,
    group_statistics,
    loocv_run,
    sweep_table,
    threshold_sweep,
    write_sweep_csv,
)
from .stats import GroupStats, betainc_regularized, group_ttest
from .synth import SynthSpec, synth_case, synth_dataset

__all__ = [
    "Case",
    "load_dataset",
    "save_dataset",
    "ConfusionCounts",
    "Metrics",
    "compute_metrics",
    "metrics",
    "CaseRow",
    "EnsembleConfig",
    "EvalReport",
    "PipelineConfig",
    "build_case_script",
    "case_measures",
    "evaluate_cases",
    "fewshot_run",
    "fewshot_split",
    "group_statistics",
    "loocv_run",
    "sweep_table",
    "threshold_sweep",
    "write_sweep_csv",
    "GroupStats",
    "betainc_regularized",
    "group_ttest",
    "SynthSpec",
    "synth_case",
    "synth_dataset",
]
