"""Parameterized layers and the module container."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ConfigurationError
from . import functional as F
from .tensor import Parameter, Tensor, default_dtype


def xavier_uniform(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-a, a, size=(fan_in, fan_out)))


def normal_init(rng, shape, std=0.02):
    return Parameter(rng.normal(0.0, std, size=shape))


class Module:
    """Container that discovers parameters and submodules from its attributes."""

    def named_parameters(self, prefix=""):
        out = OrderedDict()
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())

    def astype(self, dtype):
        """Cast every parameter in place; used to switch to 64-bit for gradient checks."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self.named_parameters().items())

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise ConfigurationError(
                f"state dict mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}"
            )
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ConfigurationError(f"parameter {k}: shape {arr.shape} != expected {p.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True):
        self.weight = xavier_uniform(rng, d_in, d_out)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    """Bias-free attention projections; the inner width equals the query width."""

    def __init__(self, d_q, d_kv, heads, rng):
        if d_q % heads:
            raise ConfigurationError(f"heads={heads} must divide attention width {d_q}")
        self.heads = heads
        self.wq = xavier_uniform(rng, d_q, d_q)
        self.wk = xavier_uniform(rng, d_kv, d_q)
        self.wv = xavier_uniform(rng, d_kv, d_q)
        self.wo = xavier_uniform(rng, d_q, d_q)

    def __call__(self, q_in, kv_in, mask=None):
        return F.multi_head_attention(q_in, kv_in, self.wq, self.wk, self.wv, self.wo, self.heads, mask)


class MLP(Module):
    def __init__(self, d, hidden, rng):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, x):
        return self.fc2(self.fc1(x).gelu())


class AttentionBlock(Module):
    """Post-norm block: LN(q + MHA(q, kv)) followed by LN(h + MLP(h))."""

    def __init__(self, d_q, d_kv, heads, mlp_hidden, rng, with_mlp=True):
        self.attn = MultiHeadAttention(d_q, d_kv, heads, rng)
        self.norm1 = LayerNorm(d_q)
        if with_mlp:
            self.mlp = MLP(d_q, mlp_hidden, rng)
            self.norm2 = LayerNorm(d_q)
        else:
            self.mlp = None
            self.norm2 = None

    def __call__(self, q, kv, mask=None):
        h = self.norm1(q + self.attn(q, kv, mask))
        if self.mlp is not None:
            h = self.norm2(h + self.mlp(h))
        return h


class FeedForwardBlock(Module):
    """LN(h + MLP(h))."""

    def __init__(self, d, hidden, rng):
        self.mlp = MLP(d, hidden, rng)
        self.norm = LayerNorm(d)

    def __call__(self, h):
        return self.norm(h + self.mlp(h))


def sinusoidal_positions(T, D, dtype=None):
    """Interleaved sine/cosine encoding: even columns sin, odd columns cos."""
    if D % 2:
        raise ConfigurationError(f"positional encoding width must be even, got {D}")
    if T < 1:
        raise ConfigurationError("positional encoding needs T >= 1")
    pos = np.arange(T, dtype=np.float64)[:, None]
    freq = np.exp(-np.log(10000.0) * np.arange(0, D, 2, dtype=np.float64) / D)
    pe = np.empty((T, D), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return Tensor(pe, dtype=dtype or default_dtype())
