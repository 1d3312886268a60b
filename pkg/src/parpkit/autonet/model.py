"""Frame-level encoder: stacked affine + nonlinearity + layernorm blocks.

Forward passes return ``(output, cache)``; ``backward(cache, dout)``
accumulates parameter gradients into the store.  Rows of the input are
frames; several sequences can be stacked row-wise, in which case ``lengths``
keeps context windows from leaking across sequence boundaries.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..rng import stream
from .params import ConfigurationError, Param, ParamStore

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 16
    hidden_dim: int = 32
    n_blocks: int = 2
    nonlinearity: str = "gelu"
    norm: bool = True
    context: int = 1
    attention: bool = False
    prune_biases: bool = True

    def __post_init__(self):
        if self.nonlinearity not in ACTIVATIONS:
            raise ConfigurationError(f"unknown nonlinearity {self.nonlinearity!r}")
        if min(self.input_dim, self.hidden_dim, self.n_blocks) < 1 or self.context < 0:
            raise ConfigurationError(f"invalid model dimensions in {self}")

    def to_dict(self) -> dict:
        return asdict(self)


def _gelu(x):
    t = np.tanh(_SQRT_2_OVER_PI * (x + _GELU_C * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)


def _act_forward(kind, x):
    if kind == "gelu":
        y, t = _gelu(x)
        return y, t
    if kind == "relu":
        return np.maximum(x, 0.0), None
    if kind == "tanh":
        y = np.tanh(x)
        return y, y
    return x, None


def _act_backward(kind, x, aux, dy):
    if kind == "gelu":
        return dy * _gelu_grad(x, aux)
    if kind == "relu":
        return dy * (x > 0)
    if kind == "tanh":
        return dy * (1.0 - aux * aux)
    return dy


ACTIVATIONS = ("gelu", "relu", "tanh", "identity")


def layernorm_forward(x, gain, bias):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LN_EPS)
    xhat = xc * inv_std
    return xhat * gain + bias, (xhat, inv_std)


def layernorm_backward(dy, gain, cache):
    xhat, inv_std = cache
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    n = xhat.shape[1]
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
    return dx, dgain, dbias


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def context_window(x: np.ndarray, lengths, context: int) -> np.ndarray:
    """Stack each frame with ``context`` zero-padded neighbours on both sides."""
    if context == 0:
        return x
    f = x.shape[1]
    out = np.zeros((x.shape[0], f * (2 * context + 1)))
    start = 0
    for n in lengths:
        seq = x[start:start + n]
        padded = np.zeros((n + 2 * context, f))
        padded[context:context + n] = seq
        for j in range(2 * context + 1):
            out[start:start + n, j * f:(j + 1) * f] = padded[j:j + n]
        start += n
    return out


def _segments(lengths, total):
    if lengths is None:
        return [total]
    lengths = [int(n) for n in lengths]
    if sum(lengths) != total:
        raise ConfigurationError(f"lengths sum {sum(lengths)} != rows {total}")
    return lengths


class EncoderModel:
    """Stateless description of the network; parameters live in a ParamStore."""

    def __init__(self, config: ModelConfig):
        self.config = config

    @property
    def window_dim(self) -> int:
        return self.config.input_dim * (2 * self.config.context + 1)

    def encoder_names(self) -> list[str]:
        cfg = self.config
        names = []
        for b in range(cfg.n_blocks):
            names += [f"block{b}.weight", f"block{b}.bias"]
            if cfg.norm:
                names += [f"block{b}.ln_gain", f"block{b}.ln_bias"]
        if cfg.attention:
            names += [f"attn.{k}" for k in ("wq", "wk", "wv", "wo")]
        return names

    def init_encoder(self, seed: int) -> ParamStore:
        cfg = self.config
        store = ParamStore()
        fan_in = self.window_dim
        for b in range(cfg.n_blocks):
            rng = stream(seed, "init", f"block{b}")
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, cfg.hidden_dim))
            store.add(Param(f"block{b}.weight", w, prunable=True))
            store.add(Param(f"block{b}.bias", rng.normal(0.0, 0.02, size=cfg.hidden_dim), prunable=cfg.prune_biases))
            if cfg.norm:
                store.add(Param(f"block{b}.ln_gain", np.ones(cfg.hidden_dim)))
                store.add(Param(f"block{b}.ln_bias", np.zeros(cfg.hidden_dim)))
            fan_in = cfg.hidden_dim
        if cfg.attention:
            rng = stream(seed, "init", "attn")
            h = cfg.hidden_dim
            for k in ("wq", "wk", "wv", "wo"):
                store.add(Param(f"attn.{k}", rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, h)), prunable=True))
        return store

    def add_head(self, store: ParamStore, head: str, out_dim: int, seed: int) -> None:
        """Attach a (never prunable) linear head named ``head``."""
        if f"head.{head}.weight" in store:
            return
        rng = stream(seed, "init", "head", head)
        h = self.config.hidden_dim
        store.add(Param(f"head.{head}.weight", rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, out_dim))))
        store.add(Param(f"head.{head}.bias", np.zeros(out_dim)))

    def head_dim(self, store: ParamStore, head: str) -> int:
        return store[f"head.{head}.weight"].value.shape[1]

    # ------------------------------------------------------------------
    def encode(self, store: ParamStore, x: np.ndarray, lengths=None):
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise ConfigurationError(f"input feature dim {x.shape[-1] if x.ndim else None} != model input dim {cfg.input_dim}")
        segs = _segments(lengths, x.shape[0])
        h = context_window(x, segs, cfg.context)
        caches = []
        for b in range(cfg.n_blocks):
            w = store[f"block{b}.weight"].value
            z = h @ w + store[f"block{b}.bias"].value
            a, aux = _act_forward(cfg.nonlinearity, z)
            ln = None
            if cfg.norm:
                a, ln = layernorm_forward(a, store[f"block{b}.ln_gain"].value, store[f"block{b}.ln_bias"].value)
            caches.append((h, z, aux, ln))
            h = a
        attn = None
        if cfg.attention:
            h, attn = self._attn_forward(store, h, segs)
        return h, (segs, caches, attn)

    def encode_backward(self, store: ParamStore, cache, dh: np.ndarray) -> None:
        cfg = self.config
        segs, caches, attn = cache
        if attn is not None:
            dh = self._attn_backward(store, attn, dh)
        for b in reversed(range(cfg.n_blocks)):
            h_in, z, aux, ln = caches[b]
            if ln is not None:
                gain = store[f"block{b}.ln_gain"]
                dh, dg, db = layernorm_backward(dh, gain.value, ln)
                gain.grad += dg
                store[f"block{b}.ln_bias"].grad += db
            dz = _act_backward(cfg.nonlinearity, z, aux, dh)
            store[f"block{b}.weight"].grad += h_in.T @ dz
            store[f"block{b}.bias"].grad += dz.sum(axis=0)
            if b > 0:
                dh = dz @ store[f"block{b}.weight"].value.T

    def forward(self, store: ParamStore, x: np.ndarray, head: str, lengths=None):
        h, enc_cache = self.encode(store, x, lengths)
        out = h @ store[f"head.{head}.weight"].value + store[f"head.{head}.bias"].value
        return out, (head, h, enc_cache)

    def backward(self, store: ParamStore, cache, dout: np.ndarray) -> None:
        head, h, enc_cache = cache
        w = store[f"head.{head}.weight"]
        w.grad += h.T @ dout
        store[f"head.{head}.bias"].grad += dout.sum(axis=0)
        self.encode_backward(store, enc_cache, dout @ w.value.T)

    # single-head residual self-attention within each sequence
    def _attn_forward(self, store, h, segs):
        wq, wk, wv, wo = (store[f"attn.{k}"].value for k in ("wq", "wk", "wv", "wo"))
        scale = 1.0 / math.sqrt(h.shape[1])
        q, k, v = h @ wq, h @ wk, h @ wv
        ctx = np.zeros_like(h)
        probs = []
        start = 0
        for n in segs:
            sl = slice(start, start + n)
            p = _softmax_rows(q[sl] @ k[sl].T * scale)
            ctx[sl] = p @ v[sl]
            probs.append(p)
            start += n
        out = h + ctx @ wo
        return out, (h, q, k, v, ctx, probs, segs, scale)

    def _attn_backward(self, store, cache, dout):
        h, q, k, v, ctx, probs, segs, scale = cache
        p_wq, p_wk, p_wv, p_wo = (store[f"attn.{n}"] for n in ("wq", "wk", "wv", "wo"))
        p_wo.grad += ctx.T @ dout
        dctx = dout @ p_wo.value.T
        dq, dk, dv = np.zeros_like(q), np.zeros_like(k), np.zeros_like(v)
        start = 0
        for n, p in zip(segs, probs):
            sl = slice(start, start + n)
            dv[sl] = p.T @ dctx[sl]
            dp = dctx[sl] @ v[sl].T
            ds = p * (dp - (dp * p).sum(axis=1, keepdims=True)) * scale
            dq[sl] = ds @ k[sl]
            dk[sl] = ds.T @ q[sl]
            start += n
        p_wq.grad += h.T @ dq
        p_wk.grad += h.T @ dk
        p_wv.grad += h.T @ dv
        return dout + dq @ p_wq.value.T + dk @ p_wk.value.T + dv @ p_wv.value.T


def layer_groups(store: ParamStore) -> dict[str, list[str]]:
    """Prunable params grouped per encoder layer (``block0`` -> [weight, bias])."""
    groups: dict[str, list[str]] = {}
    for p in store.prunable():
        groups.setdefault(p.name.split(".")[0], []).append(p.name)
    return groups
