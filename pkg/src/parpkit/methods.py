"""Subnetwork discovery and finetuning methods.

Run accounting (``runs_consumed``) counts downstream finetuning runs.  The
discovery functions report only their own runs (mpi 0, omp 1, imp one per
iteration); ``run_pipeline`` adds the subnetwork finetune where a method
needs one, giving rp/mpi/parp/parp-p 1, omp 2 and imp iterations + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .autonet.params import ConfigurationError, ParamStore
from .pruning import (
    Mask,
    apply_zero,
    check_binding,
    freeze_apply,
    global_magnitude_mask,
    ones_mask,
    prune_count,
    random_mask,
    sparsity,
)
from .tasks.objectives import MultiTask
from .training import TrainConfig, Trainer

METHODS = ("dense", "rp", "mpi", "omp", "imp", "parp", "parp-p")


@dataclass
class MethodResult:
    method: str
    store: ParamStore | None
    mask: Mask
    trace: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    sparsities: list = field(default_factory=list)
    runs_consumed: int = 0
    total_updates: int = 0
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SparsitySchedule:
    entries: tuple  # ((event index, sparsity), ...), 1-based events

    def __post_init__(self):
        values = [s for _, s in self.entries]
        if any(b < a for a, b in zip(values, values[1:])):
            raise ConfigurationError("sparsity schedule must be non-decreasing")
        if any(not 0.0 <= s <= 1.0 for s in values):
            raise ConfigurationError("sparsities must lie in [0, 1]")

    @property
    def values(self) -> list[float]:
        return [s for _, s in self.entries]

    @classmethod
    def constant(cls, s: float, events: int) -> "SparsitySchedule":
        return cls(tuple((k, s) for k in range(1, events + 1)))

    @classmethod
    def progressive(cls, s0: float, s: float, events: int, kind: str = "linear") -> "SparsitySchedule":
        """Ramp from ``s0`` (exclusive) to ``s`` (reached at the last event)."""
        out = []
        for k in range(1, events + 1):
            frac = k / events
            if kind == "geometric" and s < 1.0:
                value = 1.0 - (1.0 - s0) * ((1.0 - s) / (1.0 - s0)) ** frac
            else:
                value = s0 + (s - s0) * frac
            out.append((k, s if k == events else value))
        return cls(tuple(out))


def imp_schedule(s: float, rho: float = 0.10) -> list[float]:
    """Per-iteration sparsities 1-(1-rho)^k, the last clamped to ``s``."""
    if s <= 0.0:
        return []
    out, k = [], 1
    while True:
        value = 1.0 - (1.0 - rho) ** k
        if value >= s - 1e-12:
            out.append(s)
            return out
        out.append(value)
        k += 1


def expected_runs(method: str, s: float, rho: float = 0.10) -> int:
    """Finetuning runs the full pipeline of ``method`` consumes."""
    if method == "imp":
        return len(imp_schedule(s, rho)) + 1
    if method == "omp":
        return 2
    return 1


def _attach(task, pretrained: ParamStore, config: TrainConfig) -> ParamStore:
    return task.attach(pretrained, config.seed)


def _result(method, trainer, store, mask, runs, **kw) -> MethodResult:
    return MethodResult(method, store, mask, trace=list(trainer.trace), evals=list(trainer.evals),
                        runs_consumed=runs, total_updates=trainer.step, **kw)


def mpi(pretrained: ParamStore, s: float) -> Mask:
    """Magnitude pruning of the pretrained weights; no finetuning."""
    return global_magnitude_mask(pretrained, s)


def rp(pretrained: ParamStore, s: float, seed: int) -> Mask:
    return random_mask(pretrained, s, seed)


def finetune_dense(pretrained: ParamStore, task, config: TrainConfig) -> MethodResult:
    store = _attach(task, pretrained, config)
    trainer = Trainer(store, task, config)
    trainer.run_to_end()
    runs = 1 if config.total_updates > 0 else 0
    return _result("dense", trainer, store, ones_mask(store), runs, sparsities=[0.0])


def omp(pretrained: ParamStore, task, config: TrainConfig, s: float) -> MethodResult:
    """Finetune densely, then prune the finetuned weights by magnitude.

    The mask is meant for the pretrained weights (see ``subnetwork_finetune``);
    ``store`` holds the finetuned dense weights.
    """
    dense = finetune_dense(pretrained, task, config)
    mask = global_magnitude_mask(dense.store, s)
    dense.method, dense.mask = "omp", mask
    dense.snapshots, dense.sparsities = [mask], [sparsity(mask)]
    return dense


def subnetwork_finetune(pretrained: ParamStore, mask: Mask, task, config: TrainConfig) -> MethodResult:
    """Finetune ``mask * theta_0`` with pruned weights pinned at zero the whole run."""
    store = _attach(task, pretrained, config)
    check_binding(mask, store)
    apply_zero(store, mask)
    trainer = Trainer(store, task, config)
    trainer.hooks.append(freeze_apply(store, mask))
    dropped = {n: ~b.reshape(store[n].value.shape) for n, b in mask.bits.items() if not b.all()}
    zero_checks = []

    def check(tr):
        if tr.config.eval_interval and tr.step % tr.config.eval_interval == 0:
            worst = max((float(abs(store[n].value[d]).max()) for n, d in dropped.items()), default=0.0)
            zero_checks.append((tr.step, worst))

    trainer.step_callbacks.append(check)
    trainer.run_to_end()
    return _result("subnetwork", trainer, store, mask, 1, sparsities=[sparsity(mask)],
                   extras={"zero_checks": zero_checks})


def imp(pretrained: ParamStore, task, config: TrainConfig, s: float) -> MethodResult:
    """Iterative magnitude pruning with optional rewinding.

    Iteration 1 finetunes densely from theta_0; each later iteration restarts
    from the rewind point (theta_0, or the weights at step
    ``floor(rewind_fraction * N)`` of the first run) with the current mask
    frozen.  After every iteration ``prune_fraction`` of the remaining
    weights is removed; the last iteration lands exactly on ``s``.
    """
    if not 0.0 <= s < 1.0:
        raise ConfigurationError(f"imp needs 0 <= s < 1, got {s}")
    base = _attach(task, pretrained, config)
    mask = ones_mask(base)
    schedule = imp_schedule(s, config.prune_fraction)
    rewind_step = int(math.floor(config.rewind_fraction * config.total_updates))
    rewind_state = base.state_dict()
    result = MethodResult("imp", None, mask, runs_consumed=0)
    for k, target in enumerate(schedule):
        store = base.copy()
        store.load_state_dict(rewind_state if k > 0 else base.state_dict())
        apply_zero(store, mask)
        trainer = Trainer(store, task, config)
        trainer.hooks.append(freeze_apply(store, mask))
        if k == 0 and rewind_step > 0:
            def grab(tr, _state=rewind_state):
                if tr.step == rewind_step:
                    _state.update(tr.store.state_dict())
            trainer.step_callbacks.append(grab)
        trainer.run_to_end()
        mask = global_magnitude_mask(store, target, within=mask)
        result.snapshots.append(mask)
        result.sparsities.append(sparsity(mask))
        result.trace.extend(trainer.trace)
        result.evals.extend(trainer.evals)
        result.runs_consumed += 1
        result.total_updates += trainer.step
        result.store = store
    result.mask = mask
    return result


def _parp_core(method, pretrained, initial_mask, task, config, schedule: SparsitySchedule) -> MethodResult:
    store = _attach(task, pretrained, config)
    check_binding(initial_mask, store)
    n, total = config.interval, config.total_updates
    if total > 0 and n > total:
        raise ConfigurationError(f"re-prune interval n={n} exceeds total updates N={total}")
    trainer = Trainer(store, task, config)
    mask = initial_mask
    result = MethodResult(method, store, mask, runs_consumed=1 if total > 0 else 0)
    event = 0
    while trainer.step < total:
        apply_zero(store, mask)
        trainer.train(min(n, total - trainer.step))
        mask = global_magnitude_mask(store, schedule.values[event])
        event += 1
        if config.reset_moments:
            trainer.opt.reset()
        result.snapshots.append(mask)
        result.sparsities.append(sparsity(mask))
    apply_zero(store, mask)
    result.mask = mask
    result.trace, result.evals, result.total_updates = list(trainer.trace), list(trainer.evals), trainer.step
    return result


def n_events(config: TrainConfig) -> int:
    """Re-prune events in one PARP run (the last segment may be partial)."""
    if config.total_updates == 0:
        return 0
    return math.ceil(config.total_updates / config.interval)


def parp(pretrained: ParamStore, initial_mask: Mask, task, config: TrainConfig, s: float | None = None) -> MethodResult:
    """Prune-adjust-re-prune at a fixed target sparsity.

    Pruned weights are zeroed but keep receiving gradient updates, and the
    mask is recomputed by global magnitude every ``config.interval`` updates.
    Optimizer moments survive re-prune events unless ``reset_moments``.
    """
    s = initial_mask.declared_sparsity if s is None else s
    d = initial_mask.size
    if d - initial_mask.kept() != prune_count(s, d):
        raise ConfigurationError(f"initial mask sparsity {sparsity(initial_mask):.6f} does not match s={s}")
    schedule = SparsitySchedule.constant(s, n_events(config))
    return _parp_core("parp", pretrained, initial_mask, task, config, schedule)


def parp_p(pretrained: ParamStore, task, config: TrainConfig, s0: float, s: float,
           initial_mask: Mask | None = None) -> MethodResult:
    """PARP starting from an ``s0``-sparse MPI mask and ramping to ``s``."""
    if not 0.0 <= s0 < s <= 1.0:
        raise ConfigurationError(f"parp-p needs 0 <= s0 < s <= 1, got s0={s0}, s={s}")
    initial = mpi(pretrained, s0) if initial_mask is None else initial_mask
    schedule = SparsitySchedule.progressive(s0, s, n_events(config), config.schedule_kind)
    result = _parp_core("parp-p", pretrained, initial, task, config, schedule)
    result.extras["schedule"] = schedule.entries
    return result


@dataclass
class JointResult:
    mask: Mask
    store: ParamStore  # shared encoder plus one head per task
    per_task: dict
    discovery: MethodResult
    runs_consumed: int


def joint_discover(pretrained: ParamStore, tasks, method: str, config: TrainConfig, s: float) -> JointResult:
    """Discover one mask shared by several tasks in one interleaved run."""
    if method not in ("omp", "parp"):
        raise ConfigurationError(f"joint discovery supports omp or parp, not {method!r}")
    multi = MultiTask(tasks)
    if method == "omp":
        found = omp(pretrained, multi, config, s)
        final = subnetwork_finetune(pretrained, found.mask, multi, config)
        runs = found.runs_consumed + final.runs_consumed
    else:
        found = final = parp(pretrained, mpi(pretrained, s), multi, config, s)
        runs = found.runs_consumed
    per_task = {t.task_id: t.evaluate(final.store, "dev") for t in multi.tasks}
    return JointResult(found.mask, final.store, per_task, found, runs)


def run_pipeline(method: str, pretrained: ParamStore, task, config: TrainConfig, s: float,
                 start_sparsity: float | None = None, initial_mask: Mask | None = None) -> MethodResult:
    """Discovery plus whatever finetuning the method needs to yield a model."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "dense" or (s == 0.0 and method != "parp"):
        out = finetune_dense(pretrained, task, config)
        out.method = method
        out.runs_consumed = expected_runs(method, s, config.prune_fraction)
        return out
    if method == "parp":
        init = mpi(pretrained, s) if initial_mask is None else initial_mask
        return parp(pretrained, init, task, config, s)
    if method == "parp-p":
        s0 = max(0.0, s - 0.2) if start_sparsity is None else start_sparsity
        return parp_p(pretrained, task, config, s0, s, initial_mask)
    discovery_runs = 0
    if method == "rp":
        mask = rp(pretrained, s, config.seed)
    elif method == "mpi":
        mask = mpi(pretrained, s)
    elif method == "omp":
        found = omp(pretrained, task, config, s)
        mask, discovery_runs = found.mask, found.runs_consumed
    else:
        found = imp(pretrained, task, config, s)
        mask, discovery_runs = found.mask, found.runs_consumed
    out = subnetwork_finetune(pretrained, mask, task, config)
    out.method = method
    out.runs_consumed += discovery_runs
    out.extras["discovery_runs"] = discovery_runs
    return out
