"""Binary pruning masks over the prunable part of a ParamStore.

A kept weight has bit 1, a pruned weight bit 0.  Masks are bound to a store
layout through ``ParamStore.layout_hash``; applying a mask to a store with a
different layout raises ``BindingError``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autonet.params import ParamStore
from .rng import stream

MAGIC = b"PARPMASK"
FORMAT_VERSION = 1


class BindingError(ValueError):
    """Mask and store disagree on the prunable layout."""


class MaskFormatError(ValueError):
    """Mask file is truncated, corrupted, or of an unknown version."""


def prune_count(s: float, d: int) -> int:
    """Number of weights to clear at sparsity ``s``; rounds half away from zero."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"sparsity must lie in [0, 1], got {s}")
    return min(d, int(math.floor(s * d + 0.5)))


@dataclass(frozen=True, eq=False)
class Mask:
    bits: dict  # name -> bool ndarray shaped like the param
    layout_hash: bytes
    declared_sparsity: float

    def __post_init__(self):
        for arr in self.bits.values():
            arr.setflags(write=False)

    @property
    def names(self) -> list[str]:
        return list(self.bits)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.bits.values())

    def flat(self) -> np.ndarray:
        parts = [a.ravel() for a in self.bits.values()]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)

    def kept(self) -> int:
        return int(sum(a.sum() for a in self.bits.values()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return (self.layout_hash == other.layout_hash and self.names == other.names
                and all(np.array_equal(self.bits[n].ravel(), other.bits[n].ravel()) for n in self.names))

    __hash__ = None

    @classmethod
    def from_flat(cls, store_or_template, flat: np.ndarray, declared_sparsity: float) -> "Mask":
        """Split a flat keep-vector back into per-param arrays."""
        shapes = _shapes(store_or_template)
        bits, start = {}, 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            bits[name] = np.asarray(flat[start:start + n], dtype=bool).reshape(shape).copy()
            start += n
        if start != flat.size:
            raise BindingError(f"flat mask has {flat.size} bits, layout needs {start}")
        return cls(bits, _layout_hash(store_or_template), float(declared_sparsity))


def _shapes(obj):
    if isinstance(obj, Mask):
        return [(n, a.shape) for n, a in obj.bits.items()]
    return [(p.name, p.value.shape) for p in obj.prunable()]


def _layout_hash(obj) -> bytes:
    return obj.layout_hash if isinstance(obj, Mask) else obj.layout_hash()


def ones_mask(store: ParamStore) -> Mask:
    return Mask({p.name: np.ones(p.value.shape, dtype=bool) for p in store.prunable()}, store.layout_hash(), 0.0)


def sparsity(mask: Mask) -> float:
    d = mask.size
    return 0.0 if d == 0 else (d - mask.kept()) / d


def global_magnitude_mask(store: ParamStore, s: float, within: Mask | None = None) -> Mask:
    """Unstructured global magnitude pruning.

    Clears the ``round(s * d)`` smallest-magnitude prunable weights over all
    layers at once.  Ties go to the earlier (param order, flat index).  With
    ``within``, weights already pruned by that mask are cleared first, so the
    result is nested inside it (used by iterative pruning).
    """
    mags = np.abs(store.flat_prunable())
    k = prune_count(s, mags.size)
    if within is not None:
        check_binding(within, store)
        mags = np.where(within.flat(), mags, -1.0)
    order = np.argsort(mags, kind="stable")
    keep = np.ones(mags.size, dtype=bool)
    keep[order[:k]] = False
    return Mask.from_flat(store, keep, s)


def random_mask(store: ParamStore, s: float, seed: int) -> Mask:
    """Uniformly random mask with exactly ``round(s * d)`` cleared bits."""
    d = store.d_prunable
    k = prune_count(s, d)
    keep = np.ones(d, dtype=bool)
    keep[stream(seed, "random_mask").permutation(d)[:k]] = False
    return Mask.from_flat(store, keep, s)


def check_binding(mask: Mask, store: ParamStore) -> None:
    if mask.layout_hash != store.layout_hash():
        raise BindingError("mask layout hash does not match the store's prunable layout")


def apply_zero(store: ParamStore, mask: Mask) -> None:
    """Zero pruned weights in place.  Gradients are left alone, so pruned
    weights can still be updated later."""
    check_binding(mask, store)
    for name, bits in mask.bits.items():
        p = store[name]
        p.value[~bits.reshape(p.value.shape)] = 0.0


def freeze_apply(store: ParamStore, mask: Mask):
    """Return a post-step hook pinning pruned weights (and their grads and
    optimizer moments) at exactly zero."""
    check_binding(mask, store)
    dropped = {name: ~bits.reshape(store[name].value.shape) for name, bits in mask.bits.items() if not bits.all()}

    def hook(store: ParamStore, opt_state=None) -> None:
        for name, drop in dropped.items():
            p = store[name]
            p.value[drop] = 0.0
            p.grad[drop] = 0.0
            if opt_state is not None:
                for moment in opt_state.moments(name):
                    if moment is not None:
                        moment[drop] = 0.0

    return hook


def weight_sparsity(store: ParamStore) -> float:
    """Fraction of exactly-zero prunable weights."""
    flat = store.flat_prunable()
    return 0.0 if flat.size == 0 else float(np.count_nonzero(flat == 0.0)) / flat.size


# ----------------------------------------------------------------------
# File format (all integers little-endian):
#   magic "PARPMASK" | u16 version | 32-byte layout hash | f64 declared sparsity
#   | u32 param count | per param: u16 name length, name bytes, u64 bit count,
#   LSB-first packed bits zero-padded to a byte.
# Shapes are not stored; load_mask returns flat arrays unless a template
# store is supplied.
def mask_to_bytes(mask: Mask) -> bytes:
    out = [MAGIC, struct.pack("<H", FORMAT_VERSION), mask.layout_hash,
           struct.pack("<d", mask.declared_sparsity), struct.pack("<I", len(mask.bits))]
    for name, bits in mask.bits.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<Q", bits.size))
        out.append(np.packbits(bits.ravel(), bitorder="little").tobytes())
    return b"".join(out)


def mask_from_bytes(data: bytes, template: ParamStore | None = None) -> Mask:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise MaskFormatError("truncated mask file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(8) != MAGIC:
        raise MaskFormatError("bad magic; not a mask file")
    (version,) = struct.unpack("<H", take(2))
    if version != FORMAT_VERSION:
        raise MaskFormatError(f"unsupported mask format version {version}")
    layout = take(32)
    (declared,) = struct.unpack("<d", take(8))
    (count,) = struct.unpack("<I", take(4))
    bits = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (nbits,) = struct.unpack("<Q", take(8))
        packed = np.frombuffer(take((nbits + 7) // 8), dtype=np.uint8)
        bits[name] = np.unpackbits(packed, count=nbits, bitorder="little").astype(bool)
    if pos != len(data):
        raise MaskFormatError("trailing bytes after mask payload")
    if template is not None:
        if layout != template.layout_hash():
            raise BindingError("mask file was written for a different layout")
        bits = {name: bits[name].reshape(template[name].value.shape) for name in bits}
    return Mask(bits, layout, declared)


def save_mask(mask: Mask, path) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(mask_to_bytes(mask))
    tmp.replace(path)
    return path


def load_mask(path, template: ParamStore | None = None) -> Mask:
    return mask_from_bytes(Path(path).read_bytes(), template)
