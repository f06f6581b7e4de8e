"""Network building blocks on top of the autodiff core.

Parameters live in an insertion-ordered name -> Tensor2 map so training,
checkpointing, and gradient checks all see one flat namespace.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .errors import ConfigError
from .nn import Tensor2


class ParameterStore:
    """Flat named parameter map with seeded initialization helpers."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor2] = {}

    def _register(self, name, values):
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name}")
        t = Tensor2(np.asarray(values, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def dense(self, name, out_dim, in_dim):
        w = self.rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
        self._register(f"{name}.w", w)
        self._register(f"{name}.b", np.zeros((out_dim, 1)))

    def layernorm(self, name, dim):
        self._register(f"{name}.g", np.ones((dim, 1)))
        self._register(f"{name}.b", np.zeros((dim, 1)))

    def conv(self, name, dim, ksize):
        k = self.rng.standard_normal((dim, ksize)) / np.sqrt(ksize)
        self._register(f"{name}.k", k)
        self._register(f"{name}.b", np.zeros((dim, 1)))

    def __getitem__(self, name) -> Tensor2:
        return self.params[name]

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()


def dense(params, name, x: Tensor2) -> Tensor2:
    return nn.add(nn.matmul(params[f"{name}.w"], x), params[f"{name}.b"])


def layernorm(params, name, x: Tensor2) -> Tensor2:
    return nn.layernorm_cols(x, params[f"{name}.g"], params[f"{name}.b"])


def attention(params, name, x: Tensor2, heads: int) -> Tensor2:
    """Multi-head self-attention over the frame axis (no mask)."""
    channels = x.rows
    if channels % heads != 0:
        raise ConfigError(f"channels {channels} not divisible by heads {heads}")
    head_dim = channels // heads
    q = dense(params, f"{name}.q", x)
    k = dense(params, f"{name}.k", x)
    v = dense(params, f"{name}.v", x)
    outs = []
    scl = 1.0 / np.sqrt(head_dim)
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = nn.slice_rows(q, lo, hi)
        kh = nn.slice_rows(k, lo, hi)
        vh = nn.slice_rows(v, lo, hi)
        scores = nn.scale(nn.matmul(nn.transpose(kh), qh), scl)  # (keys, queries)
        weights = nn.softmax_cols(scores)
        outs.append(nn.matmul(vh, weights))
    merged = outs[0] if heads == 1 else nn.concat_rows(outs)
    return dense(params, f"{name}.o", merged)


def feed_forward(params, name, x: Tensor2) -> Tensor2:
    return dense(params, f"{name}.out", nn.gelu(dense(params, f"{name}.in", x)))


def conv_module(params, name, x: Tensor2) -> Tensor2:
    h = nn.depthwise_conv(x, params[f"{name}.dw.k"], params[f"{name}.dw.b"])
    return dense(params, f"{name}.pw", nn.gelu(h))


def conformer_block(params, name, x: Tensor2, heads: int) -> Tensor2:
    """Residual block: layernorm, self-attention, feed-forward, depthwise
    convolution, layernorm; the branch output is added back onto the input."""
    h = layernorm(params, f"{name}.ln1", x)
    h = attention(params, f"{name}.attn", h, heads)
    h = feed_forward(params, f"{name}.ffn", h)
    h = conv_module(params, f"{name}.conv", h)
    h = layernorm(params, f"{name}.ln2", h)
    return nn.add(x, h)


def register_conformer_block(store: ParameterStore, name, channels, heads,
                             ffn_expansion=4, conv_kernel=7):
    store.layernorm(f"{name}.ln1", channels)
    for part in ("q", "k", "v", "o"):
        store.dense(f"{name}.attn.{part}", channels, channels)
    store.dense(f"{name}.ffn.in", channels * ffn_expansion, channels)
    store.dense(f"{name}.ffn.out", channels, channels * ffn_expansion)
    store.conv(f"{name}.conv.dw", channels, conv_kernel)
    store.dense(f"{name}.conv.pw", channels, channels)
    store.layernorm(f"{name}.ln2", channels)
