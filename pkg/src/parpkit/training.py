"""Single-run training loop shared by pretraining and every pruning method.

A ``Trainer`` owns the optimizer state, the LR schedule position and the
batch stream, so a method can train in several segments (PARP re-prunes
between them) and still form one continuous run.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .autonet.optim import OPTIMIZERS, LRSchedule, lr_at
from .autonet.params import ConfigurationError, ParamStore
from .rng import stream

DIVERGENCE_LOSS = 1e6
DIVERGENCE_PATIENCE = 10


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    total_updates: int = 300
    batch_size: int = 8
    peak_lr: float = 2e-3
    floor_ratio: float = 0.01
    seed: int = 0
    eval_interval: int = 0
    prune_interval: int | None = None
    rewind_fraction: float = 0.0
    prune_fraction: float = 0.10
    optimizer: str = "adam"
    reset_moments: bool = False
    schedule_kind: str = "linear"

    def __post_init__(self):
        if self.total_updates < 0:
            raise ConfigurationError("total_updates must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 < self.prune_fraction < 1.0:
            raise ConfigurationError("prune_fraction must lie in (0, 1)")
        if not 0.0 <= self.rewind_fraction <= 1.0:
            raise ConfigurationError("rewind_fraction must lie in [0, 1]")
        if self.prune_interval is not None and self.prune_interval < 1:
            raise ConfigurationError("prune_interval must be >= 1")
        if self.schedule_kind not in ("linear", "geometric"):
            raise ConfigurationError(f"unknown schedule_kind {self.schedule_kind!r}")

    @property
    def interval(self) -> int:
        """Re-prune interval n; defaults to N/20."""
        if self.prune_interval is not None:
            return self.prune_interval
        return max(1, self.total_updates // 20)

    @property
    def schedule(self) -> LRSchedule:
        return LRSchedule(self.peak_lr, self.total_updates, self.floor_ratio)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


class Trainer:
    def __init__(self, store: ParamStore, task, config: TrainConfig, stream_label: str = "batches"):
        self.store = store
        self.task = task
        self.config = config
        state_cls, self._step_fn = OPTIMIZERS[config.optimizer]
        self.opt = state_cls()
        self.rng = stream(config.seed, stream_label)
        self.step = 0
        self.trace: list[tuple[int, float, float]] = []
        self.evals: list[tuple[int, dict]] = []
        self.hooks = []
        self.step_callbacks = []
        self._bad_steps = 0
        if hasattr(task, "reset_stream"):
            task.reset_stream()

    def train(self, n_updates: int) -> None:
        cfg = self.config
        schedule = cfg.schedule
        for _ in range(n_updates):
            if self.step >= cfg.total_updates:
                raise ConfigurationError("trainer asked to run past total_updates")
            batch = self.task.sample_batch(self.rng, cfg.batch_size)
            self.store.zero_grad()
            loss = self.task.loss_and_grad(self.store, batch)
            lr = lr_at(schedule, self.step + 1)
            finite = math.isfinite(loss)
            if not finite or loss > DIVERGENCE_LOSS:
                self._bad_steps += 1
                if self._bad_steps >= DIVERGENCE_PATIENCE:
                    raise DivergenceError(self.step + 1, loss)
            else:
                self._bad_steps = 0
            if finite:
                self._step_fn(self.store, self.opt, lr)
            for hook in self.hooks:
                hook(self.store, self.opt)
            self.step += 1
            self.trace.append((self.step, lr, float(loss)))
            for cb in self.step_callbacks:
                cb(self)
            if cfg.eval_interval and self.step % cfg.eval_interval == 0:
                self.evals.append((self.step, self.task.evaluate(self.store, "dev")))

    def run_to_end(self) -> None:
        self.train(self.config.total_updates - self.step)


def smoothed(values, window: int = 10) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size < window:
        return values.copy()
    return np.convolve(values, np.ones(window) / window, mode="valid")
