from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamStore


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    param: str | None
    index: tuple | None
    checked: int


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    # gradients smaller than `floor` are compared on an absolute scale of `floor`
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(store: ParamStore, loss_fn, eps: float = 1e-6, names=None, floor: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients against central differences, element by element.

    ``loss_fn(store)`` must return the scalar loss and accumulate gradients
    into ``store``.  Never raises on disagreement; read the report.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    store.zero_grad()
    loss_fn(store)
    params = [p for p in store if names is None or p.name in names]
    analytic = {p.name: p.grad.copy() for p in params}
    worst = GradCheckReport(0.0, None, None, 0)
    checked = 0
    for p in params:
        flat = p.value.reshape(-1)
        ga = analytic[p.name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            store.zero_grad()
            up = loss_fn(store)
            flat[i] = orig - eps
            store.zero_grad()
            down = loss_fn(store)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            err = relative_error(float(ga[i]), numeric, floor)
            checked += 1
            if err > worst.max_rel_error or worst.param is None:
                worst = GradCheckReport(err, p.name, np.unravel_index(i, p.value.shape), checked)
    store.zero_grad()
    return GradCheckReport(worst.max_rel_error, worst.param, worst.index, checked)
