"""Dense float64 tensors with reverse-mode differentiation.

Every model operation is built from the primitives here so analytic
gradients can be checked against central finite differences. Conventions:

* convolutions are cross-correlations (no kernel flip);
* relu'(0) = 0; maxpool routes its gradient to the first maximal element
  in scan order;
* gradients accumulate across backward calls and must be zeroed explicitly;
* any NaN/Inf produced by an operation raises NonFinite instead of
  propagating silently.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DegenerateOutput,
    DetachedTensor,
    EmptyConcat,
    LabelOutOfRange,
    NonFinite,
    NotScalar,
    ShapeMismatch,
)

_GRAD_ENABLED = True
_SEQ = itertools.count()


@contextmanager
def no_grad():
    """Disable graph recording (evaluation fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr: np.ndarray, what: str = "operation output"):
    # One-pass check: the sum is non-finite iff the array contains NaN/Inf
    # (false positives would need magnitudes near the float64 overflow limit,
    # far outside the engine's documented operating range).
    if not np.isfinite(np.sum(arr)):
        if np.all(np.isfinite(arr)):
            return
        raise NonFinite(f"non-finite values in {what}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor constructor input")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Optional[tuple] = None
        self._backward_fn = None
        self._seq = next(_SEQ)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise NotScalar(f"expected scalar, got shape {self.shape}")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient management ------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(g, self.data.shape).copy()
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise NotScalar(f"backward needs a scalar loss, got shape {self.shape}")
        if self._parents is None and not self.requires_grad:
            raise DetachedTensor("loss tensor is not attached to any graph")
        # Reverse creation order is a valid topological order of the graph.
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            if t._parents is not None:
                stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq, reverse=True)

        # Working buffers keep this pass separate from .grad so that a second
        # backward call adds exactly one more copy of the gradient.
        work: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in nodes:
            g_out = work.get(id(node))
            if g_out is None:
                continue
            if node.requires_grad:
                node._accumulate(g_out)
            if node._parents is None:
                continue
            grads = node._backward_fn(g_out)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in work:
                    work[pid] += g
                else:
                    arr = np.array(g, dtype=np.float64)
                    if arr.shape != parent.data.shape:
                        arr = np.broadcast_to(g, parent.data.shape).copy()
                    work[pid] = arr
        # finite-ness of leaf gradients is the engine's contract
        for node in nodes:
            if node._parents is None and node.grad is not None:
                _check_finite(node.grad, "gradient")

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor/tensor division not supported")

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _from_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    _check_finite(data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_SEQ)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = None
        out._backward_fn = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise and structural ops -----------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as e:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from e
    return _from_op(data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError as e:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from e
    return _from_op(data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.shape),
                               _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _from_op(a.data * c, (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _from_op(a.data + c, (a,), lambda g: (g,))


def texp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _from_op(data, (a,), lambda g: (g * data,))


def tlog(a: Tensor) -> Tensor:
    data = np.log(a.data)
    return _from_op(data, (a,), lambda g: (g / a.data,))


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    return _from_op(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _from_op(a.data.transpose(axes), (a,),
                    lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data, dtype=np.float64)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _from_op(np.ascontiguousarray(data), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise EmptyConcat("concat of zero tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from e
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _from_op(data, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise EmptyConcat("stack of zero tensors")
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.ascontiguousarray(np.take(g, i, axis=axis))
                     for i in range(len(tensors)))

    return _from_op(data, tensors, backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    data = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return _from_op(data, (a,), lambda g: (_unbroadcast(g, a.shape),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    data = np.asarray(data, dtype=np.float64)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return _from_op(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # relu'(0) = 0 by convention
    return _from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_finite(a.data, "softmax input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return ((g - dot) * s,)

    return _from_op(s, (a,), backward)


def layernorm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _from_op(y, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul expects rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner extents differ: {a.shape} x {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _from_op(data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x[..., in] @ w[in, out] (+ b[out])."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


# -- spatial ops ------------------------------------------------------------

def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, width)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation: x[B,Cin,H,W] * w[Cout,Cin,kh,kw]."""
    B, Cin, H, W = x.shape
    Cout, Cin_w, kh, kw = w.shape
    if Cin != Cin_w:
        raise ShapeMismatch(f"conv2d channels: input {Cin} vs kernel {Cin_w}")
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise DegenerateOutput(f"conv2d output {Ho}x{Wo}")
    xp = _pad_hw(x.data, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    data = np.einsum("bchwij,ocij->bohw", win, w.data, optimize=True)

    def backward(g):
        gw = np.einsum("bchwij,bohw->ocij", win, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                patch = np.einsum("bohw,oc->bchw", g, w.data[:, :, i, j], optimize=True)
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += patch
        gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        return (np.ascontiguousarray(gx), gw)

    return _from_op(np.ascontiguousarray(data), (x, w), backward)


def depthwise_conv2d(x: Tensor, k: Tensor, pad: int = 1) -> Tensor:
    """Per-channel 3x3 convolution, spatial size preserved."""
    B, C, H, W = x.shape
    if k.shape[-2:] != (3, 3) or pad != 1:
        raise ShapeMismatch("depthwise_conv2d requires 3x3 kernels with pad 1")
    if k.ndim != 3 or k.shape[0] != C:
        raise ShapeMismatch(f"depthwise kernel channels {k.shape} vs input C={C}")
    xp = _pad_hw(x.data, pad)
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    data = np.einsum("bchwij,cij->bchw", win, k.data, optimize=True)

    def backward(g):
        gk = np.einsum("bchwij,bchw->cij", win, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                gxp[:, :, i:i + H, j:j + W] += g * k.data[None, :, i, j, None, None]
        return (np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W]), gk)

    return _from_op(np.ascontiguousarray(data), (x, k), backward)


def sample_depthwise_conv2d(x: Tensor, k: Tensor, pad: int = 1) -> Tensor:
    """Depthwise 3x3 convolution with a distinct kernel per sample and channel.

    x: [B, C, H, W], k: [B, C, 3, 3].
    """
    B, C, H, W = x.shape
    if k.shape != (B, C, 3, 3) or pad != 1:
        raise ShapeMismatch(f"sample kernels {k.shape} vs input {x.shape}")
    xp = _pad_hw(x.data, pad)
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    data = np.einsum("bchwij,bcij->bchw", win, k.data, optimize=True)

    def backward(g):
        gk = np.einsum("bchwij,bchw->bcij", win, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                gxp[:, :, i:i + H, j:j + W] += g * k.data[:, :, i, j, None, None]
        return (np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W]), gk)

    return _from_op(np.ascontiguousarray(data), (x, k), backward)


def maxpool2d(x: Tensor, kernel: int, stride: int, pad: int = 0) -> Tensor:
    """Max pooling; the gradient goes to the first maximal element in scan order."""
    B, C, H, W = x.shape
    if pad:
        width = [(0, 0), (0, 0), (pad, pad), (pad, pad)]
        xp = np.pad(x.data, width, constant_values=-np.inf)
    else:
        xp = x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    Ho = (Hp - kernel) // stride + 1
    Wo = (Wp - kernel) // stride + 1
    if Ho < 1 or Wo < 1:
        raise DegenerateOutput(f"maxpool2d output {Ho}x{Wo}")
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(B, C, Ho, Wo, kernel * kernel)
    am = flat.argmax(axis=-1)  # argmax returns the first maximum
    data = np.take_along_axis(flat, am[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros((B, C, Hp, Wp))
        bi, ci, oi, oj = np.indices(am.shape)
        ii = oi * stride + am // kernel
        jj = oj * stride + am % kernel
        np.add.at(gxp, (bi, ci, ii, jj), g)
        gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        return (np.ascontiguousarray(gx),)

    return _from_op(np.ascontiguousarray(data), (x,), backward)


# -- loss -------------------------------------------------------------------

def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; log input clamped at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeMismatch(f"labels shape {labels.shape} vs batch {B}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        raise LabelOutOfRange(f"labels outside [0, {C})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    picked = p[np.arange(B), labels]
    loss = -np.mean(np.log(np.maximum(picked, 1e-12)))

    def backward(g):
        gl = p.copy()
        gl[np.arange(B), labels] -= 1.0
        gl[picked <= 1e-12] = 0.0  # clamped rows contribute a constant
        return (gl * (float(g) / B),)

    return _from_op(np.asarray(loss), (logits,), backward)
