from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ConfigurationError, NumericalError, ParamStore

RAMP_FRACTION = 0.10
HOLD_END_FRACTION = 0.50


@dataclass(frozen=True)
class LRSchedule:
    """Tri-phase schedule: linear ramp (10%), hold (40%), exponential decay (50%).

    The decay reaches ``peak_lr * floor_ratio`` at the final step.
    """

    peak_lr: float
    total_steps: int
    floor_ratio: float = 0.01

    def __post_init__(self):
        if self.peak_lr < 0 or self.total_steps < 0:
            raise ConfigurationError("peak_lr and total_steps must be non-negative")
        if not 0.0 < self.floor_ratio <= 1.0:
            raise ConfigurationError(f"floor_ratio must lie in (0, 1], got {self.floor_ratio}")


def lr_at(schedule: LRSchedule, step: int) -> float:
    n = schedule.total_steps
    if step < 0 or step > n:
        raise ValueError(f"step {step} outside [0, {n}]")
    ramp_end = RAMP_FRACTION * n
    hold_end = HOLD_END_FRACTION * n
    if step < ramp_end:
        return schedule.peak_lr * step / ramp_end
    if step < hold_end:
        return schedule.peak_lr
    frac = (step - hold_end) / (n - hold_end)
    return schedule.peak_lr * schedule.floor_ratio**frac


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def moments(self, name: str):
        return self.m.get(name), self.v.get(name)

    def reset(self) -> None:
        self.step = 0
        self.m.clear()
        self.v.clear()

    def copy(self) -> "AdamState":
        return AdamState(self.beta1, self.beta2, self.eps, self.step,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def _check_grads(store: ParamStore) -> None:
    for p in store:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in {p.name}")


def adam_step(store: ParamStore, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update of every parameter, in place."""
    _check_grads(store)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p in store:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * p.grad
        v *= b2
        v += (1.0 - b2) * p.grad * p.grad
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class SGDState:
    step: int = 0

    def moments(self, name: str):
        return None, None

    def reset(self) -> None:
        self.step = 0

    def copy(self) -> "SGDState":
        return SGDState(self.step)


def sgd_step(store: ParamStore, state: SGDState, lr: float) -> None:
    _check_grads(store)
    state.step += 1
    for p in store:
        p.value -= lr * p.grad


OPTIMIZERS = {"adam": (AdamState, adam_step), "sgd": (SGDState, sgd_step)}
