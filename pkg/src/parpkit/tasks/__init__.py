"""Synthetic pretraining corpus, downstream language tasks and objectives."""

from .data import (
    Corpus,
    Dataset,
    Sequence,
    TaskSpec,
    collapse_runs,
    gen_language_task,
    gen_pretrain_corpus,
    load_dataset,
    load_or_generate,
    save_dataset,
    task_templates,
)
from .objectives import Batch, MultiTask, SequenceTask, edit_distance, make_batch
from .pretrain import OBJECTIVES, ContrastiveObjective, MaskedReconObjective, pretrain
from .toy import LinearRegressionTask

__all__ = [
    "Batch", "ContrastiveObjective", "Corpus", "Dataset", "LinearRegressionTask", "MaskedReconObjective",
    "MultiTask", "OBJECTIVES", "Sequence", "SequenceTask", "TaskSpec", "collapse_runs", "edit_distance",
    "gen_language_task", "gen_pretrain_corpus", "load_dataset", "load_or_generate", "make_batch",
    "pretrain", "save_dataset", "task_templates",
]
