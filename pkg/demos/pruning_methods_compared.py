"""Compare sparse finetuning methods on the toy CTC task.

Pretrains a small encoder with masked reconstruction (cached after the first
run), then finetunes it at several sparsities with random pruning (RP),
magnitude pruning of the pretrained weights (MPI), one-shot magnitude pruning
after finetuning (OMP) and PARP.  Prints mean dev loss per method and the run
count each method consumed.

    python3 demos/pruning_methods_compared.py [out_dir]
"""

import sys

from parpkit.harness import ExperimentConfig, report, run_dir, sparsity_sweep

out = sys.argv[1] if len(sys.argv) > 1 else "demo-runs"
cfg = ExperimentConfig(methods=("rp", "mpi", "omp", "parp"), sparsities=(0.2, 0.5, 0.8), seeds=(0, 1),
                       out_dir=out)
res = sparsity_sweep(cfg)

print(f"{'sparsity':>8}" + "".join(f"{m:>10}" for m in cfg.methods))
for s in cfg.sparsities:
    print(f"{s:>8.1f}" + "".join(f"{res.curve(m)[s][0]:>10.3f}" for m in cfg.methods))

rep = report(str(run_dir(cfg)))
runs = {(m, s): r for m, _, s, seed, r, _, _ in rep.runs if seed == 0}
print("\nfinetuning runs consumed:", {m: runs[m, 0.5] for m in cfg.methods})
print("artifacts in", run_dir(cfg))
