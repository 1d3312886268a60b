"""Sparse finetuning of pretrained encoders: PARP, PARP-P, OMP, IMP, MPI, RP.

The toolkit is built on a small float64 network library (``parpkit.autonet``)
and deterministic synthetic tasks (``parpkit.tasks``), so every method and
metric can be checked against exact oracles.
"""

__version__ = "0.1.0"

from . import analytics, autonet, harness, methods, pruning, tasks
from .analytics import iou, iou_matrix, layerwise_sparsity, mask_trajectory, overlap_matrix, overlap_pct, random_iou_baseline
from .methods import (
    MethodResult,
    SparsitySchedule,
    finetune_dense,
    imp,
    joint_discover,
    mpi,
    omp,
    parp,
    parp_p,
    run_pipeline,
    subnetwork_finetune,
)
from .pruning import Mask, apply_zero, freeze_apply, global_magnitude_mask, load_mask, random_mask, save_mask, sparsity
from .training import DivergenceError, TrainConfig, Trainer
