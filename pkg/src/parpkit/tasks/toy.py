"""Tiny closed-form problems used to pin the training machinery to oracles."""

from __future__ import annotations

import numpy as np

from ..autonet.params import Param, ParamStore


class LinearRegressionTask:
    """Full-batch least squares ``y ~ X w`` with ``w`` a single prunable param.

    Loss is ``mean((X w - y)^2) / 2``; every batch is the whole dataset, so
    training is deterministic gradient descent.
    """

    def __init__(self, X, y, name: str = "w"):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.name = name

    def init_store(self, w0) -> ParamStore:
        return ParamStore([Param(self.name, np.asarray(w0, dtype=np.float64), prunable=True)])

    def attach(self, store: ParamStore, seed: int = 0) -> ParamStore:
        return store.copy()

    def sample_batch(self, rng, batch_size: int):
        return None

    def loss(self, store: ParamStore, batch=None) -> float:
        r = self.X @ store[self.name].value - self.y
        return float(r @ r / (2 * self.y.size))

    def loss_and_grad(self, store: ParamStore, batch=None) -> float:
        p = store[self.name]
        r = self.X @ p.value - self.y
        p.grad += self.X.T @ r / self.y.size
        return float(r @ r / (2 * self.y.size))

    def evaluate(self, store: ParamStore, split: str = "dev") -> dict:
        return {"loss": self.loss(store), "error_rate": 0.0}

    def optimum(self, free=None) -> tuple[np.ndarray, float]:
        """Closed-form minimiser (optionally restricted to the ``free`` coordinates)."""
        d = self.X.shape[1]
        free = np.ones(d, dtype=bool) if free is None else np.asarray(free, dtype=bool)
        w = np.zeros(d)
        w[free] = np.linalg.lstsq(self.X[:, free], self.y, rcond=None)[0]
        r = self.X @ w - self.y
        return w, float(r @ r / (2 * self.y.size))
