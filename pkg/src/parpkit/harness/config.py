"""Experiment configs: canonical JSON and a SHA-256 digest as run identity."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..autonet.model import ModelConfig
from ..autonet.params import ConfigurationError
from ..methods import METHODS
from ..tasks.pretrain import OBJECTIVES
from ..training import TrainConfig

KINDS = ("pretrain", "sweep", "transfer-matrix", "joint", "iou-report", "ablation")
TRANSFER_MODES = ("frozen", "parp")

# Desk-scale defaults shared by the CLI, the demos and the acceptance suite.
TOY_MODEL = ModelConfig(input_dim=16, hidden_dim=32, n_blocks=4, context=1)
TOY_TRAIN = TrainConfig(total_updates=300, batch_size=8, peak_lr=7e-4, prune_interval=2)
TOY_NOISE = 1.2


@dataclass(frozen=True)
class PretrainSpec:
    objective: str = "masked-recon"
    seed: int = 0
    steps: int = 4000
    peak_lr: float = 3e-3
    batch_size: int = 8
    corpus_size: int = 2000
    noise: float = TOY_NOISE
    mask_prob: float = 0.5
    dim_prob: float = 0.5

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"pretrain.objective: unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.steps < 0 or self.corpus_size < 1:
            raise ConfigurationError("pretrain.steps must be >= 0 and pretrain.corpus_size >= 1")

    def options(self) -> dict:
        if self.objective == "masked-recon":
            return {"mask_prob": self.mask_prob, "dim_prob": self.dim_prob}
        return {"mask_prob": self.mask_prob}


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def digest_of(obj) -> str:
    return hashlib.sha256(canonical_json(obj)).hexdigest()


def _tuple(value, cast):
    if isinstance(value, (str, int, float)):
        value = [value]
    return tuple(cast(v) for v in value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's outputs.

    ``out_dir`` only says where artifacts go, so it is left out of the digest.
    ``initial_mask`` is ``"mpi"``, ``"rp"`` or a path to a mask file.
    """

    kind: str = "sweep"
    methods: tuple = ("parp",)
    tasks: tuple = ("lang-00",)
    sparsities: tuple = (0.5,)
    seeds: tuple = (0,)
    train: TrainConfig = TOY_TRAIN
    model: ModelConfig = TOY_MODEL
    pretrain: PretrainSpec = field(default_factory=PretrainSpec)
    checkpoint: str | None = None
    task_noise: float = TOY_NOISE
    mode: str = "frozen"
    start_sparsity: float | None = None
    initial_mask: str = "mpi"
    out_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "methods", _tuple(self.methods, str))
        object.__setattr__(self, "tasks", _tuple(self.tasks, str))
        object.__setattr__(self, "sparsities", _tuple(self.sparsities, float))
        object.__setattr__(self, "seeds", _tuple(self.seeds, int))
        if self.kind not in KINDS:
            raise ConfigurationError(f"kind: unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        allowed = {"joint": ("omp", "parp"), "transfer-matrix": ("omp",), "iou-report": METHODS}.get(self.kind, METHODS)
        for m in self.methods:
            if m not in allowed:
                raise ConfigurationError(f"methods: unknown method id {m!r} for {self.kind}; expected one of {allowed}")
        if self.kind not in ("pretrain",) and not self.methods:
            raise ConfigurationError("methods: at least one method is required")
        if not self.tasks:
            raise ConfigurationError("tasks: at least one task is required")
        if not self.seeds:
            raise ConfigurationError("seeds: at least one seed is required")
        if any(not 0.0 <= s <= 1.0 for s in self.sparsities):
            raise ConfigurationError("sparsities: every sparsity must lie in [0, 1]")
        if self.start_sparsity is not None and not 0.0 <= self.start_sparsity <= 1.0:
            raise ConfigurationError("start_sparsity: must lie in [0, 1]")
        if self.mode not in TRANSFER_MODES:
            raise ConfigurationError(f"mode: unknown transfer mode {self.mode!r}; expected one of {TRANSFER_MODES}")
        if not self.initial_mask:
            raise ConfigurationError("initial_mask: must be 'mpi', 'rp' or a mask path")

    def identity(self) -> dict:
        """The digested part of the config, as plain JSON types."""
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "out_dir"}
        out["train"] = asdict(self.train)
        out["model"] = asdict(self.model)
        out["pretrain"] = asdict(self.pretrain)
        for key in ("methods", "tasks", "sparsities", "seeds"):
            out[key] = list(out[key])
        return out

    def to_dict(self) -> dict:
        return {**self.identity(), "out_dir": self.out_dir}

    def to_json(self) -> str:
        return canonical_json(self.to_dict()).decode("utf-8")

    @property
    def digest(self) -> str:
        return digest_of(self.identity())

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"{unknown[0]}: unknown config field")
        for key, sub in (("train", TrainConfig), ("model", ModelConfig), ("pretrain", PretrainSpec)):
            if isinstance(data.get(key), dict):
                try:
                    data[key] = sub(**data[key])
                except TypeError as exc:
                    raise ConfigurationError(f"{key}: {exc}") from None
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)
