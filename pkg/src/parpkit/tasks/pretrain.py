"""Toy self-supervised pretraining: masked reconstruction or contrastive.

Both objectives hide parts of a random subset of input frames and ask the encoder
(which sees neighbouring frames through its context window) to recover
them: by regression for ``masked-recon``, by picking the true frame out of
distractors for ``contrastive``.  Pretraining returns encoder weights only;
the SSL head is discarded.
"""

from __future__ import annotations

import numpy as np

from ..autonet.losses import contrastive_loss, masked_recon_loss
from ..autonet.model import EncoderModel
from ..autonet.params import ParamStore
from ..training import TrainConfig, Trainer
from .data import Corpus
from .objectives import make_batch

OBJECTIVES = ("masked-recon", "contrastive")


def _mask_positions(rng, total: int, mask_prob: float) -> np.ndarray:
    pos = np.flatnonzero(rng.random(total) < mask_prob)
    if pos.size == 0:
        pos = np.array([int(rng.integers(total))])
    return pos


class MaskedReconObjective:
    head = "ssl.recon"

    """Regress the hidden coordinates of partly masked frames.

    Each masked frame hides every feature dimension with probability
    ``dim_prob``; only hidden coordinates are scored, so copying the visible
    input earns nothing.
    """

    def __init__(self, model: EncoderModel, corpus: Corpus, mask_prob: float = 0.5, dim_prob: float = 0.5):
        self.model = model
        self.corpus = corpus
        self.mask_prob = mask_prob
        self.dim_prob = dim_prob

    def sample_batch(self, rng, batch_size: int):
        seqs = self.corpus.sequences
        batch = make_batch([seqs[i] for i in rng.integers(len(seqs), size=batch_size)], "pretrain")
        pos = _mask_positions(rng, batch.features.shape[0], self.mask_prob)
        return batch, pos, rng.random((pos.size, batch.features.shape[1])) < self.dim_prob

    def loss_and_grad(self, store: ParamStore, item) -> float:
        batch, pos, dims = item
        return masked_recon_loss(self.model, store, batch.features, pos, self.head, batch.lengths, dims)

    def evaluate(self, store, split="dev"):
        return {}


class ContrastiveObjective:
    """InfoNCE between the encoder's prediction at a masked frame and the
    true (unit-normalised) frame, against ``n_negatives`` other frames of the
    same batch."""

    head = "ssl.contrast"

    def __init__(self, model: EncoderModel, corpus: Corpus, mask_prob: float = 0.25,
                 n_negatives: int = 8, temperature: float = 0.5):
        self.model = model
        self.corpus = corpus
        self.mask_prob = mask_prob
        self.n_negatives = n_negatives
        self.temperature = temperature

    def sample_batch(self, rng, batch_size: int):
        seqs = self.corpus.sequences
        batch = make_batch([seqs[i] for i in rng.integers(len(seqs), size=batch_size)], "pretrain")
        total = batch.features.shape[0]
        pos = _mask_positions(rng, total, self.mask_prob)
        negs = rng.integers(total - 1, size=(pos.size, self.n_negatives))
        negs += negs >= pos[:, None]  # never the positive frame itself
        return batch, pos, negs

    def loss_and_grad(self, store: ParamStore, item) -> float:
        batch, pos, negs = item
        x = batch.features
        targets = x / np.linalg.norm(x, axis=1, keepdims=True).clip(min=1e-12)
        corrupted = x.copy()
        corrupted[pos] = 0.0
        out, cache = self.model.forward(store, corrupted, self.head, batch.lengths)
        dout = np.zeros_like(out)
        total = 0.0
        for i, t in enumerate(pos):
            loss, (da, _, _) = contrastive_loss(out[t], targets[t], targets[negs[i]], self.temperature)
            total += loss
            dout[t] += da / pos.size
        self.model.backward(store, cache, dout)
        return total / pos.size

    def evaluate(self, store, split="dev"):
        return {}


def make_objective(kind: str, model: EncoderModel, corpus: Corpus, **options):
    if kind == "masked-recon":
        return MaskedReconObjective(model, corpus, **options)
    if kind == "contrastive":
        return ContrastiveObjective(model, corpus, **options)
    raise ValueError(f"unknown pretraining objective {kind!r}; expected one of {OBJECTIVES}")


def pretrain(model: EncoderModel, corpus: Corpus, objective: str, config: TrainConfig,
             init: ParamStore | None = None, return_trainer: bool = False, **options):
    """Train the encoder with an SSL objective; returns encoder weights (theta_0)."""
    if not corpus.sequences:
        raise ValueError("pretraining corpus is empty")
    obj = make_objective(objective, model, corpus, **options)
    store = model.init_encoder(config.seed) if init is None else init.copy()
    encoder = store.names()
    model.add_head(store, obj.head, model.config.input_dim, config.seed)
    trainer = Trainer(store, obj, config, stream_label=f"pretrain/{objective}")
    trainer.run_to_end()
    theta0 = store.subset(encoder)
    return (theta0, trainer) if return_trainer else theta0
