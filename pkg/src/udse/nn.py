"""Minimal reverse-mode automatic differentiation over 2-D arrays.

A Tensor2 wraps a numpy array and remembers how it was produced; calling
``backward`` on a scalar result walks the graph in reverse topological
order and accumulates exact gradients into every node. Only the operations
this package needs exist: matrix products, broadcasting adds, column
softmax and layer norm, GELU, depthwise convolution along the frame axis,
row concatenation/slicing, and cross-entropy against integer tokens.

Training runs in float32; float64 graphs exist for finite-difference
verification. All kernels are plain numpy, so results are deterministic
for a fixed seed.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, RangeError

LOG_FLOOR = 1e-12
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor2:
    """A value in the computation graph: a 2-D (or scalar) array plus an
    optional gradient buffer of the same shape."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None):
        self.values = np.asarray(values)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from this (scalar) node."""
        if self.values.size != 1:
            raise ConfigError("backward starts from a scalar loss node")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        return f"Tensor2(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(g, shape):
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _node(values, parents, backward_fn):
    return Tensor2(values, parents=tuple(parents), backward_fn=backward_fn)


def add(a: Tensor2, b: Tensor2) -> Tensor2:
    out_vals = a.values + b.values

    def backward_fn(g):
        a._accumulate(_unbroadcast(g, a.values.shape))
        b._accumulate(_unbroadcast(g, b.values.shape))

    return _node(out_vals, (a, b), backward_fn)


def sub(a: Tensor2, b: Tensor2) -> Tensor2:
    out_vals = a.values - b.values

    def backward_fn(g):
        a._accumulate(_unbroadcast(g, a.values.shape))
        b._accumulate(-_unbroadcast(g, b.values.shape))

    return _node(out_vals, (a, b), backward_fn)


def mul(a: Tensor2, b: Tensor2) -> Tensor2:
    out_vals = a.values * b.values

    def backward_fn(g):
        a._accumulate(_unbroadcast(g * b.values, a.values.shape))
        b._accumulate(_unbroadcast(g * a.values, b.values.shape))

    return _node(out_vals, (a, b), backward_fn)


def scale(a: Tensor2, s: float) -> Tensor2:
    def backward_fn(g):
        a._accumulate(g * s)

    return _node(a.values * s, (a,), backward_fn)


def matmul(a: Tensor2, b: Tensor2) -> Tensor2:
    out_vals = a.values @ b.values

    def backward_fn(g):
        a._accumulate(g @ b.values.T)
        b._accumulate(a.values.T @ g)

    return _node(out_vals, (a, b), backward_fn)


def transpose(a: Tensor2) -> Tensor2:
    def backward_fn(g):
        a._accumulate(g.T)

    return _node(a.values.T, (a,), backward_fn)


def concat_rows(parts) -> Tensor2:
    parts = list(parts)
    sizes = [p.values.shape[0] for p in parts]
    out_vals = np.concatenate([p.values for p in parts], axis=0)

    def backward_fn(g):
        start = 0
        for p, size in zip(parts, sizes):
            p._accumulate(g[start:start + size])
            start += size

    return _node(out_vals, parts, backward_fn)


def slice_rows(a: Tensor2, start: int, stop: int) -> Tensor2:
    def backward_fn(g):
        buf = np.zeros_like(a.values)
        buf[start:stop] = g
        a._accumulate(buf)

    return _node(a.values[start:stop], (a,), backward_fn)


def gelu(a: Tensor2) -> Tensor2:
    x = a.values
    cdf = ndtr(x).astype(x.dtype)
    out_vals = x * cdf

    def backward_fn(g):
        pdf = (np.exp(-0.5 * x * x) * _INV_SQRT_2PI).astype(x.dtype)
        a._accumulate(g * (cdf + x * pdf))

    return _node(out_vals, (a,), backward_fn)


def _softmax_cols_values(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_cols(a: Tensor2) -> Tensor2:
    p = _softmax_cols_values(a.values)

    def backward_fn(g):
        a._accumulate(p * (g - (p * g).sum(axis=0, keepdims=True)))

    return _node(p, (a,), backward_fn)


def layernorm_cols(a: Tensor2, gain: Tensor2, bias: Tensor2, eps: float = 1e-5) -> Tensor2:
    x = a.values
    c = x.shape[0]
    mu = x.mean(axis=0, keepdims=True)
    centered = x - mu
    var = (centered ** 2).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = centered * inv
    out_vals = gain.values * xhat + bias.values

    def backward_fn(g):
        dxhat = g * gain.values
        # standard layer-norm backward over the channel axis
        dx = inv / c * (c * dxhat - dxhat.sum(axis=0, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=0, keepdims=True))
        a._accumulate(dx)
        gain._accumulate(_unbroadcast(g * xhat, gain.values.shape))
        bias._accumulate(_unbroadcast(g, bias.values.shape))

    return _node(out_vals, (a, gain, bias), backward_fn)


def depthwise_conv(a: Tensor2, kernel: Tensor2, bias: Tensor2) -> Tensor2:
    """Per-channel 1-D convolution along the frame axis with same padding.
    kernel has shape (C, ksize) with odd ksize."""
    x = a.values
    k = kernel.values
    ksize = k.shape[1]
    if ksize % 2 != 1:
        raise ConfigError("depthwise kernel size must be odd")
    pad = ksize // 2
    length = x.shape[1]
    xpad = np.pad(x, ((0, 0), (pad, pad)))
    out_vals = np.zeros_like(x)
    for j in range(ksize):
        out_vals += k[:, j:j + 1] * xpad[:, j:j + length]
    out_vals = out_vals + bias.values

    def backward_fn(g):
        gpad = np.zeros_like(xpad)
        dk = np.empty_like(k)
        for j in range(ksize):
            gpad[:, j:j + length] += k[:, j:j + 1] * g
            dk[:, j] = (g * xpad[:, j:j + length]).sum(axis=1)
        a._accumulate(gpad[:, pad:pad + length])
        kernel._accumulate(dk)
        bias._accumulate(_unbroadcast(g, bias.values.shape))

    return _node(out_vals, (a, kernel, bias), backward_fn)


def cross_entropy_graph(probs: Tensor2, targets: np.ndarray) -> Tensor2:
    """Mean negative log probability of 1-based integer targets, with the
    log argument floored at 1e-12. Scalar output node."""
    targets = _check_targets(targets, probs.values.shape)
    length = probs.values.shape[1]
    cols = np.arange(length)
    picked = probs.values[targets - 1, cols]
    clamped = np.maximum(picked, LOG_FLOOR)
    out_vals = np.asarray(-np.mean(np.log(clamped)), dtype=probs.values.dtype)

    def backward_fn(g):
        buf = np.zeros_like(probs.values)
        live = picked > LOG_FLOOR
        buf[targets[live] - 1, cols[live]] = -1.0 / (length * picked[live])
        probs._accumulate(buf * g)

    return _node(out_vals, (probs,), backward_fn)


def mean_tensors(parts) -> Tensor2:
    """Arithmetic mean of scalar nodes (used to average per-stage losses)."""
    parts = list(parts)
    total = parts[0]
    for p in parts[1:]:
        total = add(total, p)
    return scale(total, 1.0 / len(parts))


def _check_targets(targets, probs_shape):
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    m, length = probs_shape
    if targets.shape[0] != length:
        raise ConfigError(f"targets length {targets.shape[0]} != columns {length}")
    if targets.size and (targets.min() < 1 or targets.max() > m):
        bad = targets[(targets < 1) | (targets > m)][0]
        raise RangeError(f"target token {bad} outside 1..{m}")
    return targets


# ---------------------------------------------------------------------------
# Plain-array entry points shared by evaluation code and tests.

def softmax_columns(logits: np.ndarray) -> np.ndarray:
    """Numerically stable column softmax of a plain array."""
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise ConfigError("softmax requires finite logits")
    return _softmax_cols_values(logits)


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean -log(probs[target]) over columns for 1-based targets."""
    probs = np.asarray(probs)
    targets = _check_targets(targets, probs.shape)
    picked = probs[targets - 1, np.arange(probs.shape[1])]
    return float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR))))
