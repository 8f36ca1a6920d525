"""Batched attention / feed-forward building blocks and parameter init.

All attention projections are bias-free so that a zero key/value sequence
produces an exactly-zero context vector (the empty-knowledge contract);
feed-forward layers keep their biases.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .errors import ShapeError
from .numerics import ParameterSet, Tensor

_POSENC_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Standard fixed sin/cos position encodings, cached per (n, d)."""
    key = (n, d)
    if key not in _POSENC_CACHE:
        pos = np.arange(n, dtype=np.float64)[:, None]
        div = np.exp(np.arange(0, d, 2, dtype=np.float64) * (-np.log(10000.0) / d))
        pe = np.zeros((n, d), dtype=np.float64)
        pe[:, 0::2] = np.sin(pos * div)
        pe[:, 1::2] = np.cos(pos * div[: (d // 2)])
        pe.setflags(write=False)
        _POSENC_CACHE[key] = pe
    return _POSENC_CACHE[key]


def init_projection(params: ParameterSet, name: str, fan_in: int, fan_out: int,
                    rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    params.add(name, nm.tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                               requires_grad=True))


def init_embedding(params: ParameterSet, name: str, n: int, d: int,
                   rng: np.random.Generator) -> None:
    params.add(name, nm.tensor(rng.normal(0.0, 0.02, size=(n, d)), requires_grad=True))


def init_layer_norm(params: ParameterSet, prefix: str, d: int) -> None:
    params.add(prefix + "gamma", nm.tensor(np.ones(d), requires_grad=True))
    params.add(prefix + "beta", nm.tensor(np.zeros(d), requires_grad=True))


def init_attention(params: ParameterSet, prefix: str, d_model: int,
                   rng: np.random.Generator, d_k_in: int | None = None,
                   d_v_in: int | None = None) -> None:
    init_projection(params, prefix + "wq", d_model, d_model, rng)
    init_projection(params, prefix + "wk", d_k_in or d_model, d_model, rng)
    init_projection(params, prefix + "wv", d_v_in or d_model, d_model, rng)
    init_projection(params, prefix + "wo", d_model, d_model, rng)
    init_layer_norm(params, prefix + "ln.", d_model)


def init_ffn(params: ParameterSet, prefix: str, d_model: int, d_ff: int,
             rng: np.random.Generator) -> None:
    init_projection(params, prefix + "w1", d_model, d_ff, rng)
    params.add(prefix + "b1", nm.zeros(d_ff, requires_grad=True))
    init_projection(params, prefix + "w2", d_ff, d_model, rng)
    params.add(prefix + "b2", nm.zeros(d_model, requires_grad=True))
    init_layer_norm(params, prefix + "ln.", d_model)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """[B, n, D] -> [B, h, n, D/h]"""
    b, n, d = x.shape
    return nm.transpose(nm.reshape(x, (b, n, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[B, h, n, dh] -> [B, n, D]"""
    b, h, n, dh = x.shape
    return nm.reshape(nm.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def attention_core(q_proj: Tensor, k_proj: Tensor, v_proj: Tensor, wo: Tensor,
                   mask, n_heads: int):
    """Scaled dot-product attention over already-projected inputs.

    q_proj [B, nq, D], k_proj/v_proj [B, m, D], mask broadcastable to
    [B, h, nq, m] (True = attend). Returns contexts [B, nq, D] and the
    softmax weights [B, h, nq, m].
    """
    d = q_proj.shape[-1]
    if d % n_heads:
        raise ShapeError(f"head count {n_heads} does not divide width {d}")
    dh = d // n_heads
    q = split_heads(q_proj, n_heads)
    k = split_heads(k_proj, n_heads)
    v = split_heads(v_proj, n_heads)
    logits = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    weights = nm.masked_softmax(logits, mask)
    ctx = nm.matmul(weights, v)
    return nm.matmul(merge_heads(ctx), wo), weights


def multi_head_attention(params: ParameterSet, prefix: str, n_heads: int,
                         queries: Tensor, keys: Tensor, values: Tensor, mask):
    """Full projected attention: [B, nq, *] x [B, m, *] -> [B, nq, D]."""
    q = nm.matmul(queries, params[prefix + "wq"])
    k = nm.matmul(keys, params[prefix + "wk"])
    v = nm.matmul(values, params[prefix + "wv"])
    return attention_core(q, k, v, params[prefix + "wo"], mask, n_heads)


def residual_ln(params: ParameterSet, prefix: str, x: Tensor, sub: Tensor) -> Tensor:
    return nm.layer_norm(nm.add(sub, x), params[prefix + "gamma"], params[prefix + "beta"])


def feed_forward(params: ParameterSet, prefix: str, x: Tensor) -> Tensor:
    h = nm.relu(nm.add(nm.matmul(x, params[prefix + "w1"]), params[prefix + "b1"]))
    return nm.add(nm.matmul(h, params[prefix + "w2"]), params[prefix + "b2"])


def self_attention_block(params: ParameterSet, prefix: str, n_heads: int,
                         x: Tensor, mask) -> Tensor:
    """Post-norm residual self-attention sublayer."""
    ctx, _ = multi_head_attention(params, prefix, n_heads, x, x, x, mask)
    return residual_ln(params, prefix + "ln.", x, ctx)


def feed_forward_block(params: ParameterSet, prefix: str, x: Tensor) -> Tensor:
    """Post-norm residual feed-forward sublayer."""
    return residual_ln(params, prefix + "ln.", x, feed_forward(params, prefix, x))


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """[B, m] validity -> broadcastable attention mask [B, 1, 1, m]."""
    return valid[:, None, None, :]


def causal_mask(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))[None, None, :, :]
