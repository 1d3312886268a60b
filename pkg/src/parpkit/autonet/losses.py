"""Losses with analytic gradients.

Pure losses return ``(loss, grad)`` with the gradient taken with respect to
their array inputs.  ``masked_recon_loss`` runs the model too and accumulates
parameter gradients into the store.
"""

from __future__ import annotations

import numpy as np

from .params import ConfigurationError


class InfeasibleTargetError(ValueError):
    """CTC target cannot be aligned to the available frames."""


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_softmax_backward(log_probs: np.ndarray, dlog_probs: np.ndarray) -> np.ndarray:
    return dlog_probs - np.exp(log_probs) * dlog_probs.sum(axis=-1, keepdims=True)


def ce_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean per-frame cross-entropy and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    t, v = logits.shape
    if labels.shape != (t,):
        raise ValueError(f"expected {t} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= v):
        raise ValueError(f"label out of range [0, {v})")
    lp = log_softmax(logits)
    rows = np.arange(t)
    loss = -lp[rows, labels].mean()
    grad = np.exp(lp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / t


def _extend(target, blank):
    ext = [blank]
    for c in target:
        ext += [int(c), blank]
    return np.asarray(ext, dtype=np.int64)


def min_ctc_frames(target) -> int:
    """Frames needed to emit ``target``: one per label plus a blank per repeat."""
    target = list(target)
    return len(target) + sum(1 for a, b in zip(target, target[1:]) if a == b)


def ctc_loss(log_probs: np.ndarray, target, blank_id: int = 0) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``target`` under CTC, with its gradient.

    The forward-backward recursion runs in log space over the
    blank-augmented label sequence.  The gradient is taken w.r.t.
    ``log_probs`` treated as free inputs, i.e. minus the state-occupancy
    posteriors summed per symbol.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    t_len, v = lp.shape
    target = [int(c) for c in target]
    if any(c == blank_id or c < 0 or c >= v for c in target):
        raise ValueError("target labels must be in [0, V) and differ from blank")
    need = min_ctc_frames(target)
    if t_len < need:
        raise InfeasibleTargetError(f"target of length {len(target)} needs {need} frames, got {t_len}")

    ext = _extend(target, blank_id)
    s_len = ext.size
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != blank_id) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # T x S

    neg_inf = -np.inf
    alpha = np.full((t_len, s_len), neg_inf)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    with np.errstate(invalid="ignore"):
        for t in range(1, t_len):
            prev = alpha[t - 1]
            acc = prev.copy()
            acc[1:] = np.logaddexp(acc[1:], prev[:-1])
            acc[skip] = np.logaddexp(acc[skip], prev[np.flatnonzero(skip) - 2])
            alpha[t] = acc + emit[t]

        beta = np.full((t_len, s_len), neg_inf)
        beta[-1, -1] = emit[-1, -1]
        if s_len > 1:
            beta[-1, -2] = emit[-1, -2]
        skip_fwd = np.zeros(s_len, dtype=bool)
        skip_fwd[:-2] = skip[2:]
        for t in range(t_len - 2, -1, -1):
            nxt = beta[t + 1]
            acc = nxt.copy()
            acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
            acc[skip_fwd] = np.logaddexp(acc[skip_fwd], nxt[np.flatnonzero(skip_fwd) + 2])
            beta[t] = acc + emit[t]

    log_p = alpha[-1, -1] if s_len == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    if not np.isfinite(log_p):
        raise InfeasibleTargetError("target has zero probability under log_probs")

    occupancy = np.exp(alpha + beta - emit - log_p)  # T x S
    grad = np.zeros_like(lp)
    for s in range(s_len):
        grad[:, ext[s]] -= occupancy[:, s]
    return float(-log_p), grad


def ctc_greedy_decode(log_probs: np.ndarray, blank_id: int = 0) -> list[int]:
    """Best-path decoding: argmax per frame, collapse repeats, drop blanks."""
    best = np.asarray(log_probs).argmax(axis=1)
    out, prev = [], None
    for c in best:
        c = int(c)
        if c != prev and c != blank_id:
            out.append(c)
        prev = c
    return out


def masked_recon_loss(model, store, x: np.ndarray, mask_positions, head: str = "recon", lengths=None,
                      masked_dims=None) -> float:
    """MSE (squared frame norm, averaged over masked frames) of reconstructing
    the masked frames.

    Masked input frames are zeroed before the forward pass.  With
    ``masked_dims`` (bool, one row per masked frame) only those feature
    dimensions are zeroed and scored.  Gradients are accumulated into
    ``store``.
    """
    pos = np.unique(np.asarray(mask_positions, dtype=np.int64))
    if pos.size == 0:
        raise ValueError("mask_positions must be non-empty")
    x = np.asarray(x, dtype=np.float64)
    if pos.min() < 0 or pos.max() >= x.shape[0]:
        raise ValueError("mask position outside the frame range")
    corrupted = x.copy()
    if masked_dims is None:
        corrupted[pos] = 0.0
    else:
        if np.asarray(mask_positions).size != pos.size:
            raise ValueError("masked_dims needs unique, sorted mask positions")
        corrupted[pos] = np.where(masked_dims, 0.0, corrupted[pos])
    out, cache = model.forward(store, corrupted, head, lengths)
    diff = out[pos] - x[pos]
    if masked_dims is not None:
        diff = np.where(masked_dims, diff, 0.0)
    loss = float((diff * diff).sum() / pos.size)
    dout = np.zeros_like(out)
    dout[pos] = 2.0 * diff / pos.size
    model.backward(store, cache, dout)
    return loss


def contrastive_loss(anchor, positive, negatives, temperature: float = 1.0):
    """InfoNCE for one anchor against one positive and ``K`` negatives.

    Returns ``(loss, (d_anchor, d_positive, d_negatives))``.
    """
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    a = np.asarray(anchor, dtype=np.float64)
    p = np.asarray(positive, dtype=np.float64)
    n = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if n.shape[0] < 1 or p.shape != a.shape or n.shape[1] != a.shape[0]:
        raise ValueError("anchor, positive and negatives must share a dimension and K >= 1")
    cands = np.vstack([p[None, :], n])
    scores = cands @ a / temperature
    lse = np.logaddexp.reduce(scores)
    loss = float(lse - scores[0])
    dscores = np.exp(scores - lse)
    dscores[0] -= 1.0
    dcands = np.outer(dscores, a) / temperature
    da = dscores @ cands / temperature
    return loss, (da, dcands[0], dcands[1:])
