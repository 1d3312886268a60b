"""Watch PARP move its mask on a problem small enough to follow by hand.

Two weights, loss ((w0)^2 + (w1 - 3)^2) / 4.  Magnitude pruning of the start
point (1.0, 0.5) keeps w0, the wrong weight.  Because pruned weights keep
receiving updates, one step is enough for w1 to overtake w0 and the next
re-prune swaps them.  A frozen subnetwork never recovers.
"""

import numpy as np

from parpkit.methods import mpi, parp, subnetwork_finetune
from parpkit.tasks import LinearRegressionTask
from parpkit.training import TrainConfig

task = LinearRegressionTask(np.eye(2), np.array([0.0, 3.0]))
w0 = task.init_store([1.0, 0.5])
cfg = TrainConfig(total_updates=10, peak_lr=1.0, prune_interval=1, optimizer="sgd")

start = mpi(w0, 0.5)
print("initial mask keeps:", start.bits["w"].astype(int))

frozen = subnetwork_finetune(w0, start, task, cfg)
print(f"frozen subnetwork: w={frozen.store['w'].value}, loss={task.loss(frozen.store):.4f}")

res = parp(w0, start, task, cfg)
for k, m in enumerate(res.snapshots[:3], 1):
    print(f"after re-prune {k}: keeps {m.bits['w'].astype(int)}")
print(f"PARP: w={res.store['w'].value}, loss={task.loss(res.store):.4f}")
print("optimum with one weight:", task.optimum([False, True]))
