from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


class ConfigurationError(ValueError):
    """Shapes, names or settings that cannot work together."""


class NumericalError(FloatingPointError):
    """A non-finite value reached a place that requires finite numbers."""


@dataclass
class Param:
    name: str
    value: np.ndarray
    prunable: bool = False
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ConfigurationError(f"grad shape {self.grad.shape} != value shape {self.value.shape} for {self.name}")

    @property
    def size(self) -> int:
        return self.value.size


class ParamStore:
    """Ordered collection of named parameters.

    Iteration order is insertion order and never changes afterwards, which is
    what makes mask layouts and checkpoints portable between runs.
    """

    def __init__(self, params=()):
        self._params: dict[str, Param] = {}
        for p in params:
            self.add(p)

    def add(self, param: Param) -> Param:
        if param.name in self._params:
            raise ConfigurationError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def prunable(self) -> list[Param]:
        return [p for p in self if p.prunable]

    @property
    def d_prunable(self) -> int:
        return sum(p.size for p in self.prunable())

    def zero_grad(self) -> None:
        for p in self:
            p.grad.fill(0.0)

    def copy(self) -> "ParamStore":
        return ParamStore(Param(p.name, p.value.copy(), p.prunable) for p in self)

    def subset(self, names) -> "ParamStore":
        """New store holding copies of ``names`` (in this store's order)."""
        wanted = set(names)
        return ParamStore(Param(p.name, p.value.copy(), p.prunable) for p in self if p.name in wanted)

    def layout_hash(self) -> bytes:
        """32-byte digest of the prunable layout (names, shapes, order)."""
        h = hashlib.sha256()
        for p in self.prunable():
            h.update(p.name.encode("utf-8"))
            h.update(b"\x00")
            h.update(np.asarray(p.value.shape, dtype="<u8").tobytes())
        return h.digest()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self:
            h.update(p.name.encode("utf-8"))
            h.update(b"\x01" if p.prunable else b"\x00")
            h.update(np.asarray(p.value.shape, dtype="<u8").tobytes())
            h.update(p.value.astype("<f8").tobytes())
        return h.hexdigest()

    def flat_prunable(self) -> np.ndarray:
        parts = [p.value.ravel() for p in self.prunable()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            p = self._params[name]
            if p.value.shape != value.shape:
                raise ConfigurationError(f"shape mismatch loading {name}: {value.shape} vs {p.value.shape}")
            p.value[...] = value

    def save(self, path) -> None:
        """Write an ``.npz`` checkpoint; prunable flags ride along."""
        arrays = {f"v:{p.name}": p.value for p in self}
        arrays["__prunable__"] = np.array([p.prunable for p in self], dtype=bool)
        arrays["__names__"] = np.array(self.names())
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ParamStore":
        with np.load(path, allow_pickle=False) as data:
            names = [str(n) for n in data["__names__"]]
            flags = data["__prunable__"]
            return cls(Param(n, data[f"v:{n}"].copy(), bool(f)) for n, f in zip(names, flags))


def assert_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {name}")
