"""Resolving a config's references: the encoder, theta_0 and the tasks."""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import asdict
from pathlib import Path

from ..autonet.model import EncoderModel, ModelConfig
from ..autonet.params import ConfigurationError, ParamStore
from ..tasks.data import TaskSpec, gen_pretrain_corpus, load_or_generate
from ..tasks.objectives import SequenceTask
from ..tasks.pretrain import pretrain
from ..training import TrainConfig
from .config import ExperimentConfig, PretrainSpec, digest_of

TASK_ID = re.compile(r"^lang-(\d+)$")
OUT_ENV = "PARPKIT_OUT"


def output_root(default="runs") -> Path:
    return Path(os.environ.get(OUT_ENV, default))


def task_spec(task_id: str, noise: float, feature_dim: int = 16) -> TaskSpec:
    """Task ``lang-<k>`` draws its templates and sequences from seed ``k``."""
    m = TASK_ID.match(task_id)
    if m is None:
        raise ConfigurationError(f"tasks: cannot resolve task id {task_id!r}; expected lang-<k>")
    return TaskSpec(task_id, noise=noise, seed=int(m.group(1)), feature_dim=feature_dim)


def pretrain_digest(model: ModelConfig, spec: PretrainSpec) -> str:
    return digest_of({"model": asdict(model), "pretrain": asdict(spec)})


def run_pretrain(model_cfg: ModelConfig, spec: PretrainSpec):
    """Pretrain an encoder; returns ``(theta_0, trainer)``."""
    model = EncoderModel(model_cfg)
    corpus = gen_pretrain_corpus(spec.seed, spec.corpus_size, model_cfg.input_dim, noise=spec.noise)
    cfg = TrainConfig(total_updates=spec.steps, batch_size=spec.batch_size, peak_lr=spec.peak_lr, seed=spec.seed)
    return pretrain(model, corpus, spec.objective, cfg, return_trainer=True, **spec.options())


def save_store(store: ParamStore, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        store.save(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


class Suite:
    """Lazily built encoder, pretrained weights and tasks for one config."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.model = EncoderModel(config.model)
        self.root = Path(config.out_dir)
        self._theta0 = None
        self._tasks: dict[str, SequenceTask] = {}

    @property
    def cache_dir(self) -> Path:
        return self.root / "cache"

    def checkpoint_path(self) -> Path:
        if self.config.checkpoint is not None:
            return Path(self.config.checkpoint)
        key = pretrain_digest(self.config.model, self.config.pretrain)[:16]
        return self.cache_dir / f"theta0-{key}.npz"

    @property
    def theta0(self) -> ParamStore:
        if self._theta0 is None:
            path = self.checkpoint_path()
            if self.config.checkpoint is not None:
                if not path.exists():
                    raise ConfigurationError(f"checkpoint: file not found: {path}")
                store = ParamStore.load(path)
            elif path.exists():
                store = ParamStore.load(path)
            else:
                store, _ = run_pretrain(self.config.model, self.config.pretrain)
                save_store(store, path)
            expected = self.model.init_encoder(0)
            if store.names() != expected.names() or any(
                    store[n].value.shape != expected[n].value.shape for n in expected.names()):
                raise ConfigurationError(f"checkpoint: {path} does not match the model config")
            self._theta0 = store
        return self._theta0

    def task(self, task_id: str) -> SequenceTask:
        if task_id not in self._tasks:
            spec = task_spec(task_id, self.config.task_noise, self.config.model.input_dim)
            ds = load_or_generate(spec, self.cache_dir / "data")
            self._tasks[task_id] = SequenceTask(self.model, ds)
        return self._tasks[task_id]
