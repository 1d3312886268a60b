"""Experiment orchestration: configs, run records, sweeps, transfer matrices, reports, CLI."""

from .config import KINDS, TOY_MODEL, TOY_NOISE, TOY_TRAIN, ExperimentConfig, PretrainSpec, canonical_json, digest_of
from .experiments import (
    AblationResult,
    Report,
    RunError,
    SweepResult,
    TransferResult,
    ablation_initial_mask,
    discover_mask,
    iou_report,
    report,
    run,
    run_dir,
    run_single,
    sparsity_sweep,
    transfer_matrix,
)
from .records import RecordParseError, RunRecord, atomic_write
from .suite import OUT_ENV, Suite, output_root, task_spec

__all__ = [
    "AblationResult", "ExperimentConfig", "KINDS", "OUT_ENV", "PretrainSpec", "RecordParseError", "Report",
    "RunError", "RunRecord", "Suite", "SweepResult", "TOY_MODEL", "TOY_NOISE", "TOY_TRAIN", "TransferResult",
    "ablation_initial_mask", "atomic_write", "canonical_json", "digest_of", "discover_mask", "iou_report",
    "output_root", "report", "run", "run_dir", "run_single", "sparsity_sweep", "task_spec", "transfer_matrix",
]
