"""How much do the masks of different tasks have in common?

Finds a one-shot magnitude pruning (OMP) mask per toy task and compares them
with each other, with magnitude pruning of the pretrained weights (MPI) and
with a random mask.  The MPI row sits far above the random row: most of
what finetuning would tell us about the mask is already in the pretrained
weights.  Then transfers each task's mask to the others, frozen and with PARP.

    python3 demos/masks_across_tasks.py [out_dir]
"""

import sys

import numpy as np

from parpkit.analytics import random_iou_baseline
from parpkit.harness import ExperimentConfig, Suite, discover_mask, iou_report, transfer_matrix

out = sys.argv[1] if len(sys.argv) > 1 else "demo-runs"
tasks = ("lang-00", "lang-01", "lang-02")
s = 0.5
suite = Suite(ExperimentConfig(tasks=tasks, out_dir=out))

masks = [(t, discover_mask("omp", suite, t, s, seed=0)) for t in tasks]
ious, _ = iou_report(masks, suite.theta0, s)
np.set_printoptions(precision=3, suppress=True)
print(ious.to_csv())
print(f"random baseline at s={s}: {random_iou_baseline(s):.3f}\n")

base = suite.config.replace(kind="transfer-matrix", methods=("omp",), sparsities=(s,), seeds=(0,))
found = {(t, 0): m for t, m in masks}
for mode in ("frozen", "parp"):
    cfg = base.replace(mode=mode)
    shared = Suite(cfg)
    shared._theta0, shared._tasks = suite.theta0, suite._tasks
    res = transfer_matrix(cfg, shared, masks=found)
    print(f"{mode}: dev-loss change vs same-task mask (rows: source, last row random)")
    print(res.deltas)
    print(f"off-diagonal mean {res.off_diagonal_mean():.4f}\n")
