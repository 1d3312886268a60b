"""Downstream objectives the trainer can drive.

Anything exposing ``sample_batch(rng, batch_size)``,
``loss_and_grad(store, batch)`` and ``evaluate(store, split)`` is a task.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autonet.losses import ce_loss, ctc_greedy_decode, ctc_loss, log_softmax, log_softmax_backward
from ..autonet.model import EncoderModel
from ..autonet.params import ParamStore
from .data import Dataset, gen_language_task

BLANK = 0


@dataclass(frozen=True)
class Batch:
    features: np.ndarray  # stacked frames of all sequences
    lengths: tuple
    labels: tuple
    task_id: str


def edit_distance(a, b) -> int:
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def make_batch(seqs, task_id: str) -> Batch:
    return Batch(np.vstack([s.features for s in seqs]), tuple(s.length for s in seqs),
                 tuple(s.labels for s in seqs), task_id)


class SequenceTask:
    """A language task bound to an encoder; the head is named after the task id.

    CTC heads reserve class 0 for blank, so template ``c`` is class ``c + 1``.
    """

    def __init__(self, model: EncoderModel, dataset: Dataset):
        self.model = model
        self.dataset = dataset
        self.spec = dataset.spec
        self.task_id = dataset.spec.task_id
        self.ctc = self.spec.flavor == "ctc-sequence"
        self.out_dim = self.spec.vocab_size + (1 if self.ctc else 0)
        self._eval_batches = {}

    @classmethod
    def from_spec(cls, model: EncoderModel, spec) -> "SequenceTask":
        return cls(model, gen_language_task(spec))

    @property
    def head(self) -> str:
        return self.task_id

    def attach(self, store: ParamStore, seed: int = 0) -> ParamStore:
        """Copy of ``store`` with this task's head added."""
        out = store.copy()
        self.model.add_head(out, self.head, self.out_dim, seed)
        return out

    def sample_batch(self, rng, batch_size: int) -> Batch:
        train = self.dataset.train
        idx = rng.integers(len(train), size=batch_size)
        return make_batch([train[i] for i in idx], self.task_id)

    def _per_sequence(self, out, batch: Batch, want_grad: bool):
        losses, grads, errors, ref_len = [], [], 0, 0
        start = 0
        for n, labels in zip(batch.lengths, batch.labels):
            logits = out[start:start + n]
            start += n
            if self.ctc:
                lp = log_softmax(logits)
                loss, dlp = ctc_loss(lp, labels + 1, BLANK)
                if want_grad:
                    grads.append(log_softmax_backward(lp, dlp))
                hyp = np.asarray(ctc_greedy_decode(lp, BLANK)) - 1
                errors += edit_distance(hyp, labels)
                ref_len += len(labels)
            else:
                loss, g = ce_loss(logits, labels)
                if want_grad:
                    grads.append(g)
                errors += int(np.count_nonzero(logits.argmax(axis=1) != labels))
                ref_len += n
            losses.append(loss)
        return losses, grads, errors, ref_len

    def loss_and_grad(self, store: ParamStore, batch: Batch) -> float:
        out, cache = self.model.forward(store, batch.features, self.head, batch.lengths)
        losses, grads, _, _ = self._per_sequence(out, batch, want_grad=True)
        b = len(losses)
        self.model.backward(store, cache, np.vstack(grads) / b)
        return float(np.mean(losses))

    def loss(self, store: ParamStore, batch: Batch) -> float:
        out, _ = self.model.forward(store, batch.features, self.head, batch.lengths)
        return float(np.mean(self._per_sequence(out, batch, want_grad=False)[0]))

    def evaluate(self, store: ParamStore, split: str = "dev") -> dict:
        if split not in self._eval_batches:
            self._eval_batches[split] = make_batch(self.dataset.split(split), self.task_id)
        batch = self._eval_batches[split]
        out, _ = self.model.forward(store, batch.features, self.head, batch.lengths)
        losses, _, errors, ref_len = self._per_sequence(out, batch, want_grad=False)
        return {"loss": float(np.mean(losses)), "error_rate": errors / max(ref_len, 1)}


class MultiTask:
    """Round-robin union of tasks sharing one encoder, one head per task id.

    Step ``k`` draws its batch from task ``k mod len(tasks)`` using the
    trainer's single batch stream, so duplicated tasks reproduce the
    single-task batch sequence exactly.
    """

    def __init__(self, tasks):
        if not tasks:
            raise ValueError("MultiTask needs at least one task")
        self.tasks = list(tasks)
        self._next = 0

    def reset_stream(self) -> None:
        self._next = 0

    def attach(self, store: ParamStore, seed: int = 0) -> ParamStore:
        out = store.copy()
        for t in self.tasks:
            t.model.add_head(out, t.head, t.out_dim, seed)
        return out

    def _by_id(self, task_id):
        return next(t for t in self.tasks if t.task_id == task_id)

    def sample_batch(self, rng, batch_size: int) -> Batch:
        task = self.tasks[self._next % len(self.tasks)]
        self._next += 1
        return task.sample_batch(rng, batch_size)

    def loss_and_grad(self, store: ParamStore, batch: Batch) -> float:
        return self._by_id(batch.task_id).loss_and_grad(store, batch)

    def evaluate(self, store: ParamStore, split: str = "dev") -> dict:
        per_task = {}
        for t in self.tasks:
            per_task.setdefault(t.task_id, t.evaluate(store, split))
        return {"loss": float(np.mean([m["loss"] for m in per_task.values()])),
                "error_rate": float(np.mean([m["error_rate"] for m in per_task.values()])),
                "per_task": per_task}
