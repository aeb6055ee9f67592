"""Shared building blocks for the translation model and the causal LM:
attention, feed-forward, layer-norm wrappers, masks, positions.

Parameters live in a ParameterStore under dotted prefixes; each block
has an init_* function that registers its weights and a matching apply
function that consumes them.  Masks are additive numpy constants
(0 for visible, -1e9 for hidden) broadcast over heads.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import (
    Tensor,
    add,
    dropout,
    layer_norm,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)

MASK_VALUE = -1e9


def sinusoid_table(max_len, dim, dtype=np.float32):
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def key_padding_mask(ids, pad_id, dtype=np.float32):
    """Additive mask (B, 1, 1, S) hiding pad keys from every query."""
    blocked = (ids == pad_id)[:, None, None, :]
    return np.where(blocked, dtype(MASK_VALUE), dtype(0.0))


def causal_mask(t, dtype=np.float32):
    """Additive mask (1, 1, T, T) hiding future positions."""
    blocked = np.triu(np.ones((t, t), dtype=bool), k=1)[None, None]
    return np.where(blocked, dtype(MASK_VALUE), dtype(0.0))


def linear(x, w, b=None):
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def init_layer_norm(store, prefix, dim):
    store.create(f"{prefix}.gain", (dim,), kind="ones")
    store.create(f"{prefix}.bias", (dim,), kind="zeros")


def apply_layer_norm(store, prefix, x, eps):
    return layer_norm(x, store[f"{prefix}.gain"], store[f"{prefix}.bias"], eps=eps)


def init_attention(store, prefix, dim):
    for name in ("wq", "wk", "wv", "wo"):
        store.create(f"{prefix}.{name}", (dim, dim), kind="matmul")
    for name in ("bq", "bk", "bv", "bo"):
        store.create(f"{prefix}.{name}", (dim,), kind="zeros")


def attention(store, prefix, q_in, kv_in, num_heads, mask, drop_p, rng, train):
    """Multi-head scaled dot-product attention.

    q_in (B, Tq, D), kv_in (B, Tk, D), mask broadcastable to
    (B, H, Tq, Tk) or None.  Returns (B, Tq, D).
    """
    b, tq, dim = q_in.shape
    tk = kv_in.shape[1]
    dh = dim // num_heads

    def split_heads(x, t):
        return transpose(reshape(x, (b, t, num_heads, dh)), (0, 2, 1, 3))

    q = split_heads(linear(q_in, store[f"{prefix}.wq"], store[f"{prefix}.bq"]), tq)
    k = split_heads(linear(kv_in, store[f"{prefix}.wk"], store[f"{prefix}.bk"]), tk)
    v = split_heads(linear(kv_in, store[f"{prefix}.wv"], store[f"{prefix}.bv"]), tk)
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = add(scores, Tensor(mask))
    attn = softmax(scores)
    if train and drop_p > 0:
        attn = dropout(attn, drop_p, rng)
    ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (b, tq, dim))
    return linear(ctx, store[f"{prefix}.wo"], store[f"{prefix}.bo"])


def init_ffn(store, prefix, dim, hidden):
    store.create(f"{prefix}.w1", (dim, hidden), kind="matmul")
    store.create(f"{prefix}.b1", (hidden,), kind="zeros")
    store.create(f"{prefix}.w2", (hidden, dim), kind="matmul")
    store.create(f"{prefix}.b2", (dim,), kind="zeros")


def ffn(store, prefix, x, drop_p, rng, train):
    h = relu(linear(x, store[f"{prefix}.w1"], store[f"{prefix}.b1"]))
    if train and drop_p > 0:
        h = dropout(h, drop_p, rng)
    return linear(h, store[f"{prefix}.w2"], store[f"{prefix}.b2"])


def residual(x, sub_out, drop_p, rng, train):
    if train and drop_p > 0:
        sub_out = dropout(sub_out, drop_p, rng)
    return add(x, sub_out)
