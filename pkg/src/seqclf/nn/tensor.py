"""Reverse-mode autodiff over numpy arrays.

A :class:`Tensor` records the op that produced it (parents plus a closure that
maps the output gradient to parent gradients).  ``backward`` walks the graph in
reverse topological order, accumulates gradients into leaf tensors that
require them, and then releases the graph.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import DimensionError, NumericalError, StateError

_state = threading.local()


def _get(name, default):
    return getattr(_state, name, default)


def default_dtype():
    return _get("dtype", np.float32)


def set_default_dtype(dtype):
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype!r}")
    _state.dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new tensors and parameters."""
    old = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


def is_grad_enabled():
    return _get("grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    old = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def debug_enabled():
    return _get("debug", False)


@contextlib.contextmanager
def debug_mode(enabled=True):
    """Check finiteness after every op and softmax normalization per call."""
    old = debug_enabled()
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = old


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_released", "__weakref__")
    __array_ufunc__ = None  # make ndarray (op) Tensor dispatch to Tensor

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._released = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    # graph construction

    @staticmethod
    def _make(value, parents, backward):
        needs = getattr(_state, "grad_enabled", True) and any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.data = value
        out.grad = None
        out.requires_grad = needs
        out._released = False
        if needs:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        if debug_enabled() and not np.all(np.isfinite(value)):
            raise NumericalError("non-finite value produced in forward pass")
        return out

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if self._released:
            raise StateError("graph already released; run the forward pass again before backward")
        if self._backward is None:
            raise StateError("backward called on a tensor without a recorded forward computation")
        if grad is None:
            if self.data.size != 1:
                raise StateError("backward without an explicit gradient requires a scalar")
            grad = np.ones_like(self.data)

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.array(g, dtype=node.data.dtype, copy=True)
                else:
                    node.grad += g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = None
            node._released = True

    # arithmetic

    def __add__(self, other):
        other = as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape

        def bw(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._make(self.data + other.data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data

        def bw(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor._make(a * b, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            b = other.data
            a = self.data

            def bw(g):
                return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

            return Tensor._make(a / b, (self, other), bw)
        scale = 1.0 / other
        return self * scale

    def __matmul__(self, other):
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        if a.shape[-1] != (b.shape[-2] if b.ndim > 1 else b.shape[0]):
            raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError("matmul operands must be at least 2-D")

        def bw(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._make(a @ b, (self, other), bw)

    def __rmatmul__(self, other):
        return as_tensor(other, self.dtype) @ self

    # shape ops

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def swapaxes(self, a, b):
        return Tensor._make(np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),))

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor._make(np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inv),))

    def __getitem__(self, idx):
        shape = self.shape

        def bw(g):
            full = np.zeros(shape, dtype=g.dtype)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(self.data[idx], (self,), bw)

    # reductions

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # elementwise nonlinearities

    def relu(self):
        keep = self.data > 0
        return Tensor._make(self.data * keep, (self,), lambda g: (g * keep,))

    def gelu(self):
        # tanh approximation; smooth everywhere so finite differences stay valid
        x = self.data
        c = np.sqrt(2.0 / np.pi).astype(x.dtype)
        inner = c * (x + 0.044715 * (x * x * x))
        t = np.tanh(inner)
        out = 0.5 * x * (1.0 + t)

        def bw(g):
            d_inner = c * (1.0 + 3 * 0.044715 * x * x)
            return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

        return Tensor._make(out, (self,), bw)

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def check_finite(t, what="tensor"):
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {what}")
    return t
