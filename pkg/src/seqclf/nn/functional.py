"""Differentiable building blocks: linear maps, masked softmax, layer norm,
multi-head attention, pooling and the sigmoid cross-entropy loss."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, EmptyAttentionError, NumericalError
from .tensor import Tensor, as_tensor, debug_enabled


def _mask_array(mask):
    if mask is None:
        return None
    m = mask.valid if hasattr(mask, "valid") else mask
    return np.asarray(m, dtype=bool)


def softmax(x, mask=None, axis=-1):
    """Numerically stable softmax along ``axis``.

    ``mask`` (True = valid) broadcasts against ``x``; masked entries come out
    as exact zeros and the remaining entries sum to one.
    """
    x = as_tensor(x)
    m = _mask_array(mask)
    data = x.data
    if m is not None:
        if m.shape[-1] != data.shape[axis]:
            raise DimensionError(f"mask length {m.shape[-1]} does not match input length {data.shape[axis]}")
        m = np.broadcast_to(m, data.shape)
        if not m.any(axis=axis).all():
            raise EmptyAttentionError()
        logits = np.where(m, data, -np.inf)
    else:
        logits = data
    shift = logits.max(axis=axis, keepdims=True)
    e = np.exp(logits - shift)
    if m is not None:
        e = np.where(m, e, 0.0).astype(data.dtype, copy=False)
    y = e / e.sum(axis=axis, keepdims=True)
    if debug_enabled():
        total = y.sum(axis=axis)
        if not np.allclose(total, 1.0, atol=1e-6 if y.dtype == np.float64 else 1e-5):
            raise NumericalError("softmax output does not sum to one over its support")

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), bw)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` broadcast over leading dims."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(
            f"linear: input trailing dim {x.shape[-1]} (shape {x.shape}) does not match weight shape {weight.shape}"
        )
    if x.ndim == 1:
        y = (x.reshape(1, -1) @ weight).reshape(weight.shape[1])
    else:
        y = x @ weight
    if bias is not None:
        y = y + bias
    return y


def layer_norm(x, gamma, beta, eps=1e-5):
    x = as_tensor(x)
    if x.shape[-1] != gamma.shape[-1]:
        raise DimensionError(f"layer_norm: feature dim {x.shape[-1]} vs gamma {gamma.shape}")
    data = x.data
    mu = data.mean(axis=-1, keepdims=True)
    xc = data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = data.shape[-1]
    lead = tuple(range(data.ndim - 1))

    def bw(g):
        gxhat = g * gamma.data
        gx = inv / n * (n * gxhat - gxhat.sum(-1, keepdims=True) - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._make(out.astype(data.dtype, copy=False), (x, gamma, beta), bw)


def split_heads(t, heads):
    *lead, n, d = t.shape
    if d % heads:
        raise DimensionError(f"head count {heads} does not divide projected dim {d}")
    return t.reshape(*lead, n, heads, d // heads).swapaxes(-2, -3)


def merge_heads(t):
    *lead, h, n, dh = t.shape
    return t.swapaxes(-2, -3).reshape(*lead, n, h * dh)


def multi_head_attention(q_in, kv_in, wq, wk, wv, wo, heads, mask=None, return_weights=False):
    """Scaled dot-product attention with ``heads`` heads.

    q_in: [..., Lq, Dq]; kv_in: [..., T, Dkv]; mask: [..., T] (True = real frame).
    Leading dims broadcast, so a shared query set [Lq, Dq] attends over a batch
    of sequences [B, T, Dkv].
    """
    q_in, kv_in = as_tensor(q_in), as_tensor(kv_in)
    if q_in.shape[-1] != wq.shape[0] or kv_in.shape[-1] != wk.shape[0] or kv_in.shape[-1] != wv.shape[0]:
        raise DimensionError(
            f"attention input dims q={q_in.shape} kv={kv_in.shape} do not match "
            f"Wq {wq.shape}, Wk {wk.shape}, Wv {wv.shape}"
        )
    if kv_in.shape[-2] < 1:
        raise EmptyAttentionError()
    q = split_heads(q_in @ wq, heads)
    k = split_heads(kv_in @ wk, heads)
    v = split_heads(kv_in @ wv, heads)
    dh = q.shape[-1]
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    m = _mask_array(mask)
    if m is not None:
        if m.shape[-1] != kv_in.shape[-2]:
            raise DimensionError(f"mask length {m.shape[-1]} vs sequence length {kv_in.shape[-2]}")
        m = m[..., None, None, :]
    weights = softmax(scores, m)
    out = merge_heads(weights @ v) @ wo
    if return_weights:
        return out, weights
    return out


def masked_mean(x, mask=None, axis=-2):
    """Mean over ``axis`` counting only valid positions. x: [..., T, D], mask: [..., T]."""
    x = as_tensor(x)
    m = _mask_array(mask)
    if m is None:
        return x.mean(axis=axis)
    if not m.any(axis=-1).all():
        raise EmptyAttentionError()
    w = m.astype(x.dtype) / m.sum(axis=-1, keepdims=True).astype(x.dtype)
    return (x * Tensor(w[..., None], dtype=x.dtype)).sum(axis=axis)


def embedding(table, ids):
    """Row lookup ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    return table[ids]


def log_sigmoid(z):
    """log(sigmoid(z)) without overflow."""
    z = np.asarray(z)
    return -np.logaddexp(0.0, -z)


def bce_with_logits(logits, labels, weights=None):
    """Mean sigmoid cross-entropy computed directly from logits.

    Uses max(z, 0) - z*y + log1p(exp(-|z|)), which never forms a saturated
    probability.  ``weights`` (same shape, 0/1) excludes entries; the mean is
    then taken over included entries only.
    """
    logits = as_tensor(logits)
    y = np.asarray(labels)
    if y.shape != logits.shape:
        raise DimensionError(f"labels shape {y.shape} does not match logits shape {logits.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary (0 or 1)")
    y = y.astype(logits.dtype)
    z = logits.data
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    if weights is None:
        w = np.full(z.shape, 1.0 / z.size, dtype=z.dtype)
    else:
        w = np.asarray(weights, dtype=z.dtype)
        total = w.sum()
        if total <= 0:
            raise ValueError("bce_with_logits: no entries selected by weights")
        w = w / total
    loss = np.asarray((per * w).sum(), dtype=z.dtype)
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))

    def bw(g):
        return ((sig - y) * w * g,)

    return Tensor._make(loss, (logits,), bw)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * z))
