"""Mask similarity and structure metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .pruning import BindingError, Mask


def _check_same_layout(a: Mask, b: Mask) -> None:
    if a.layout_hash != b.layout_hash or a.size != b.size:
        raise BindingError("masks are bound to different layouts")


def iou(a: Mask, b: Mask) -> float:
    """Intersection over union of the kept sets; 1.0 when both keep nothing."""
    _check_same_layout(a, b)
    fa, fb = a.flat(), b.flat()
    union = np.count_nonzero(fa | fb)
    if union == 0:
        return 1.0
    return np.count_nonzero(fa & fb) / union


def overlap_pct(a: Mask, b: Mask) -> float:
    """Kept-set intersection divided by the total prunable count."""
    _check_same_layout(a, b)
    d = a.size
    return 0.0 if d == 0 else np.count_nonzero(a.flat() & b.flat()) / d


def random_iou_baseline(s: float) -> float:
    """Expected IOU of two independent uniform masks at sparsity ``s`` (large d)."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"sparsity must lie in [0, 1], got {s}")
    if s == 1.0:
        return 1.0
    k = 1.0 - s
    return k / (2.0 - k)


@dataclass(frozen=True)
class MaskMatrix:
    """Labelled square similarity matrix; rows may carry extra reference rows."""

    row_labels: tuple
    col_labels: tuple
    values: np.ndarray
    sparsity: float | None = None
    metric: str = "iou"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", *self.col_labels])
        for label, row in zip(self.row_labels, self.values):
            w.writerow([label, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    def records(self) -> list[dict]:
        return [{"row": r, "col": c, self.metric: float(self.values[i, j])}
                for i, r in enumerate(self.row_labels) for j, c in enumerate(self.col_labels)]


IOUMatrix = MaskMatrix


def _pairwise(masks, metric, name, extra_rows=()):
    labels = tuple(label for label, _ in masks)
    rows = list(masks) + list(extra_rows)
    values = np.array([[metric(m_r, m_c) for _, m_c in masks] for _, m_r in rows], dtype=np.float64)
    s = masks[0][1].declared_sparsity if masks else None
    return MaskMatrix(tuple(label for label, _ in rows), labels, values, s, name)


def iou_matrix(masks, extra_rows=()) -> MaskMatrix:
    """Pairwise IOU over labelled masks ``[(label, mask), ...]``.

    ``extra_rows`` (e.g. MPI and RP references) are appended as rows only.
    """
    return _pairwise(list(masks), iou, "iou", extra_rows)


def overlap_matrix(masks, extra_rows=()) -> MaskMatrix:
    return _pairwise(list(masks), overlap_pct, "overlap", extra_rows)


@dataclass(frozen=True)
class LayerSparsityProfile:
    layers: tuple  # ((label, sparsity, element count), ...)
    global_sparsity: float

    def weighted_mean(self) -> float:
        total = sum(n for _, _, n in self.layers)
        return sum(s * n for _, s, n in self.layers) / total if total else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "sparsity", "elements"])
        for label, s, n in self.layers:
            w.writerow([label, repr(float(s)), n])
        w.writerow(["global", repr(float(self.global_sparsity)), sum(n for _, _, n in self.layers)])
        return buf.getvalue()


def layerwise_sparsity(mask: Mask) -> LayerSparsityProfile:
    """Per-layer zero fractions; a layer's weight and bias are pooled."""
    groups: dict[str, list[int]] = {}
    for name, bits in mask.bits.items():
        g = groups.setdefault(name.split(".")[0], [0, 0])
        g[0] += int(bits.size - np.count_nonzero(bits))
        g[1] += int(bits.size)
    layers = tuple((label, zeros / n if n else 0.0, n) for label, (zeros, n) in groups.items())
    total = sum(n for _, _, n in layers)
    zeros = sum(z for z, _ in groups.values())
    return LayerSparsityProfile(layers, zeros / total if total else 0.0)


def mask_trajectory(snapshots, reference: Mask) -> list[float]:
    return [iou(m, reference) for m in snapshots]
