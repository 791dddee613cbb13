"""Reusable blocks wired from the tensor engine.

Initialization convention: weights uniform in [-s, s] with s = sqrt(1/fan_in),
biases zero, classification token and positional embeddings zero. All draws
come from the caller-supplied Rng so a seed fixes every parameter.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import IndivisiblePatch, ShapeMismatch
from .rng import Rng
from .tensor import Tensor


class Module:
    """Minimal container giving dotted-name parameter registry."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def init_weight(rng: Rng, shape: tuple[int, ...], fan_in: int) -> Tensor:
    s = math.sqrt(1.0 / fan_in)
    return Tensor(rng.fill_uniform(shape, -s, s), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: Rng, d_in: int, d_out: int, bias: bool = True):
        self.w = init_weight(rng, (d_in, d_out), d_in)
        self.b = zeros_param((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, rng: Rng, c_in: int, c_out: int, k: int,
                 stride: int = 1, pad: int = 0):
        self.w = init_weight(rng, (c_out, c_in, k, k), c_in * k * k)
        self.b = zeros_param((c_out,))
        self.stride = stride
        self.pad = pad

    def __call__(self, x: Tensor) -> Tensor:
        y = T.conv2d(x, self.w, self.stride, self.pad)
        return T.add(y, T.reshape(self.b, (1, -1, 1, 1)))


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = zeros_param((d,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.mul(T.layernorm(x), self.gain), self.bias)


class InitialEncoder(Module):
    """7x7 conv stride 2, ReLU, 3x3 max pool stride 2; H,W -> H/4,W/4.

    Shared across views: the caller flattens views into the batch axis, so a
    single parameter set serves every view.
    """

    def __init__(self, rng: Rng, c_in: int, c_out: int):
        self.conv = Conv2d(rng, c_in, c_out, 7, stride=2, pad=3)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] < 16 or x.shape[-2] < 16:
            raise ShapeMismatch(f"initial encoder needs spatial >= 16, got {x.shape}")
        y = T.relu(self.conv(x))
        return T.maxpool2d(y, 3, 2, pad=1)


class PatchEmbed(Module):
    """Split a feature map into PxP patches and project each to width d."""

    def __init__(self, rng: Rng, c_in: int, patch: int, d: int):
        self.patch = patch
        self.proj = Linear(rng, c_in * patch * patch, d)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        p = self.patch
        if h % p or w % p:
            raise IndivisiblePatch(f"spatial {h}x{w} not divisible by patch {p}")
        x = T.reshape(x, (b, c, h // p, p, w // p, p))
        x = T.transpose(x, (0, 2, 4, 1, 3, 5))
        x = T.reshape(x, (b, (h // p) * (w // p), c * p * p))
        return self.proj(x)


class TokenPrepender(Module):
    """Learned classification token (index 0) plus learned positional embedding."""

    def __init__(self, d: int, seq_len: int):
        self.cls = zeros_param((d,))
        self.pos = zeros_param((seq_len + 1, d))

    def __call__(self, patches: Tensor) -> Tensor:
        b = patches.shape[0]
        tok = T.broadcast_to(T.reshape(self.cls, (1, 1, -1)), (b, 1, patches.shape[2]))
        return T.add(T.concat([tok, patches], axis=1), self.pos)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention over [B, L, D] projections."""
    b, lq, d = q.shape
    lk = k.shape[1]
    dh = d // heads

    def split(t, l):
        return T.transpose(T.reshape(t, (t.shape[0], l, heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q, lq), split(k, lk), split(v, lk)
    att = T.softmax(T.scale(T.matmul(qh, T.swapaxes(kh, -1, -2)), 1.0 / math.sqrt(dh)),
                    axis=-1)
    out = T.matmul(att, vh)
    return T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, lq, d))


class TransformerBlock(Module):
    """Pre-norm encoder block: x + MHSA(LN(x)), then + FFN(LN(.))."""

    def __init__(self, rng: Rng, d: int, heads: int, mlp_ratio: int = 4):
        if d % heads:
            raise ShapeMismatch(f"token width {d} not divisible by {heads} heads")
        self.heads = heads
        self.ln1 = LayerNorm(d)
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(rng, d, d * mlp_ratio)
        self.ff2 = Linear(rng, d * mlp_ratio, d)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        att = multi_head_attention(self.wq(h), self.wk(h), self.wv(h), self.heads)
        x = T.add(x, self.wo(att))
        h = self.ln2(x)
        return T.add(x, self.ff2(T.relu(self.ff1(h))))


class ResidualConvBlock(Module):
    """1x1 -> 3x3 -> 1x1 path summed with a 1x1 skip path.

    ReLU after the first two stages and after the sum.
    """

    def __init__(self, rng: Rng, c: int):
        self.conv1a = Conv2d(rng, c, c, 1)
        self.conv1b = Conv2d(rng, c, c, 3, pad=1)
        self.conv1c = Conv2d(rng, c, c, 1)
        self.conv2 = Conv2d(rng, c, c, 1)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.conv1c(T.relu(self.conv1b(T.relu(self.conv1a(x)))))
        return T.relu(T.add(y, self.conv2(x)))


class NonLocalFuse(Module):
    """Embedded-Gaussian non-local attention over all view/space positions.

    Input [B, V, C, H, W]; positions are the V*H*W locations. A residual
    connection wraps the attention, then mean pooling and a linear head give
    the fused vector [B, out_dim].
    """

    def __init__(self, rng: Rng, c: int, out_dim: Optional[int] = None):
        inter = max(1, c // 2)
        self.theta = Linear(rng, c, inter, bias=False)
        self.phi = Linear(rng, c, inter, bias=False)
        self.g = Linear(rng, c, inter, bias=False)
        self.out = Linear(rng, inter, c, bias=False)
        self.head = Linear(rng, c, out_dim if out_dim is not None else c)

    def __call__(self, x: Tensor) -> Tensor:
        b, v, c, h, w = x.shape
        pos = T.reshape(T.transpose(x, (0, 1, 3, 4, 2)), (b, v * h * w, c))
        th = self.theta(pos)
        ph = self.phi(pos)
        att = T.softmax(T.matmul(th, T.swapaxes(ph, -1, -2)), axis=-1)
        y = self.out(T.matmul(att, self.g(pos)))
        fused = T.add(pos, y)
        return self.head(T.tmean(fused, axis=1))
