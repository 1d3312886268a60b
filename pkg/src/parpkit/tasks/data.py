"""Synthetic template-sequence data.

A shared pool of feature templates plays the role of the acoustic units a
pretraining corpus covers.  Each downstream "language" owns a small
dictionary of templates derived from the pool (selected and perturbed per
task id), so languages share structure with the pretraining data but not
with each other unless asked to via ``share_with``/``overlap``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..rng import stream

FLAVORS = ("frame-classification", "ctc-sequence")
DATA_MAGIC = b"PARPDATA"


@dataclass(frozen=True)
class Sequence:
    features: np.ndarray  # T x F
    frame_labels: np.ndarray  # template id per frame
    labels: np.ndarray  # frame labels or collapsed target, depending on flavor

    @property
    def length(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    flavor: str = "ctc-sequence"
    vocab_size: int = 6
    feature_dim: int = 16
    noise: float = 0.6
    min_len: int = 8
    max_len: int = 24
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    seed: int = 0
    pool_seed: int = 0
    pool_size: int = 32
    perturbation: float = 0.35
    share_with: "TaskSpec | str | None" = None  # the task whose first templates are reused
    overlap: float = 0.0

    def __post_init__(self):
        if isinstance(self.share_with, dict):
            object.__setattr__(self, "share_with", TaskSpec(**self.share_with))
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.vocab_size < 2 or self.vocab_size > self.pool_size:
            raise ValueError("vocab_size must lie in [2, pool_size]")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Dataset:
    spec: TaskSpec
    templates: np.ndarray
    train: list = field(repr=False)
    dev: list = field(repr=False)
    test: list = field(repr=False)

    def split(self, name: str) -> list:
        return {"train": self.train, "dev": self.dev, "test": self.test}[name]

    def checksum(self) -> str:
        return hashlib.sha256(_encode_body(self)).hexdigest()


def template_pool(pool_seed: int, pool_size: int, feature_dim: int) -> np.ndarray:
    return stream(pool_seed, "template_pool").normal(0.0, 1.0, size=(pool_size, feature_dim))


def task_templates(spec: TaskSpec) -> np.ndarray:
    pool = template_pool(spec.pool_seed, spec.pool_size, spec.feature_dim)
    rng = stream(spec.seed, "dictionary", spec.task_id)
    idx = rng.choice(spec.pool_size, size=spec.vocab_size, replace=False)
    templates = pool[idx] + spec.perturbation * rng.normal(size=(spec.vocab_size, spec.feature_dim))
    if spec.share_with is not None and spec.overlap > 0:
        other = spec.share_with
        if isinstance(other, str):  # same generator settings, other task id
            other = replace(spec, task_id=other, share_with=None, overlap=0.0)
        other = task_templates(other)
        if other.shape[1] != spec.feature_dim:
            raise ValueError("shared task has a different feature_dim")
        k = int(round(spec.overlap * spec.vocab_size))
        templates[:k] = other[:k]
    return templates


def _symbol_runs(rng, n_symbols: int, length: int) -> np.ndarray:
    """Frame-level symbol ids made of runs of 2-4 frames; neighbours differ."""
    out = np.empty(length, dtype=np.int64)
    t, prev = 0, -1
    while t < length:
        sym = int(rng.integers(n_symbols - 1))
        if prev >= 0 and sym >= prev:
            sym += 1
        run = int(rng.integers(2, 5))
        out[t:t + run] = sym
        t += run
        prev = sym
    return out


def collapse_runs(frame_labels) -> np.ndarray:
    arr = np.asarray(frame_labels, dtype=np.int64)
    if arr.size == 0:
        return arr
    keep = np.ones(arr.size, dtype=bool)
    keep[1:] = arr[1:] != arr[:-1]
    return arr[keep]


def _sequences(rng, templates, noise, min_len, max_len, count, flavor):
    seqs = []
    n_sym, f = templates.shape
    for _ in range(count):
        length = int(rng.integers(min_len, max_len + 1))
        frames = _symbol_runs(rng, n_sym, length)
        feats = templates[frames] + noise * rng.normal(size=(length, f))
        labels = frames if flavor == "frame-classification" else collapse_runs(frames)
        seqs.append(Sequence(feats, frames, labels))
    return seqs


def gen_language_task(spec: TaskSpec) -> Dataset:
    templates = task_templates(spec)
    parts = []
    for split, count in (("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)):
        rng = stream(spec.seed, "sequences", spec.task_id, split)
        parts.append(_sequences(rng, templates, spec.noise, spec.min_len, spec.max_len, count, spec.flavor))
    return Dataset(spec, templates, *parts)


@dataclass(frozen=True)
class Corpus:
    seed: int
    templates: np.ndarray
    sequences: list = field(repr=False)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for s in self.sequences:
            h.update(s.features.astype("<f8").tobytes())
        return h.hexdigest()


def gen_pretrain_corpus(seed: int = 0, size: int = 2000, feature_dim: int = 16, t_range=(8, 24),
                        noise: float = 0.6, pool_seed: int = 0, pool_size: int = 32) -> Corpus:
    """Unlabeled sequences over the full template pool."""
    if size <= 0:
        raise ValueError("corpus size must be positive")
    templates = template_pool(pool_seed, pool_size, feature_dim)
    rng = stream(seed, "pretrain_corpus")
    seqs = _sequences(rng, templates, noise, t_range[0], t_range[1], size, "frame-classification")
    return Corpus(seed, templates, seqs)


# ----------------------------------------------------------------------
# Dataset cache file: magic | u32 header length | header JSON (spec echo +
# body checksum) | body.  Body, per split in train/dev/test order: u32
# sequence count, then per sequence u32 T, u32 F, T*F f64 features, u32 n,
# n i64 frame labels (T of them), u32 m, m i64 labels.  Little-endian.
def _encode_body(ds: Dataset) -> bytes:
    out = []
    for split in (ds.train, ds.dev, ds.test):
        out.append(struct.pack("<I", len(split)))
        for s in split:
            t, f = s.features.shape
            out.append(struct.pack("<II", t, f))
            out.append(s.features.astype("<f8").tobytes())
            out.append(struct.pack("<I", s.frame_labels.size))
            out.append(s.frame_labels.astype("<i8").tobytes())
            out.append(struct.pack("<I", s.labels.size))
            out.append(s.labels.astype("<i8").tobytes())
    return b"".join(out)


def save_dataset(ds: Dataset, path) -> Path:
    body = _encode_body(ds)
    header = json.dumps({"spec": ds.spec.to_dict(), "checksum": hashlib.sha256(body).hexdigest(),
                         "templates": ds.templates.tolist()}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(DATA_MAGIC + struct.pack("<I", len(header)) + header + body)
    tmp.replace(path)
    return path


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:8] != DATA_MAGIC:
        raise ValueError("not a dataset cache file")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hlen])
    body = data[12 + hlen:]
    if hashlib.sha256(body).hexdigest() != header["checksum"]:
        raise ValueError("dataset cache checksum mismatch")
    pos = 0
    splits = []
    for _ in range(3):
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        seqs = []
        for _ in range(count):
            t, f = struct.unpack_from("<II", body, pos)
            pos += 8
            feats = np.frombuffer(body, "<f8", t * f, pos).reshape(t, f).copy()
            pos += 8 * t * f
            arrays = []
            for _ in range(2):
                (n,) = struct.unpack_from("<I", body, pos)
                pos += 4
                arrays.append(np.frombuffer(body, "<i8", n, pos).astype(np.int64))
                pos += 8 * n
            seqs.append(Sequence(feats, *arrays))
        splits.append(seqs)
    return Dataset(TaskSpec(**header["spec"]), np.asarray(header["templates"]), *splits)


def load_or_generate(spec: TaskSpec, cache_dir=None) -> Dataset:
    """Regenerate by default; with ``cache_dir`` read/write a cache file."""
    if cache_dir is None:
        return gen_language_task(spec)
    key = hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
    path = Path(cache_dir) / f"{spec.task_id}-{key}.data"
    if path.exists():
        return load_dataset(path)
    ds = gen_language_task(spec)
    save_dataset(ds, path)
    return ds
