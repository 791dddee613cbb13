"""Single-level orthonormal Haar 2D wavelet transform and exact inverse.

For each non-overlapping 2x2 block [[a, b], [c, d]]:

    LL = (a+b+c+d)/2    HL = (a-b+c-d)/2
    LH = (a+b-c-d)/2    HH = (a-b-c+d)/2

The map is orthogonal, so energy is preserved and the adjoint used in
backward equals the inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OddExtent, ShapeMismatch
from .tensor import Tensor, _from_op, concat, reshape


@dataclass
class WaveletBands:
    """The four subbands of one decomposition level (last two axes halved)."""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    source_shape: tuple[int, int]

    def __iter__(self):
        return iter((self.ll, self.lh, self.hl, self.hh))


def _dwt_core(x: np.ndarray) -> np.ndarray:
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a + b - c - d) * 0.5
    hl = (a - b + c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return np.stack([ll, lh, hl, hh], axis=0)


def _iwt_core(s: np.ndarray) -> np.ndarray:
    ll, lh, hl, hh = s[0], s[1], s[2], s[3]
    a = (ll + hl + lh + hh) * 0.5
    b = (ll - hl + lh - hh) * 0.5
    c = (ll + hl - lh - hh) * 0.5
    d = (ll - hl - lh + hh) * 0.5
    shape = list(ll.shape)
    shape[-2] *= 2
    shape[-1] *= 2
    out = np.empty(shape, dtype=np.float64)
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out


def dwt2(x: Tensor) -> WaveletBands:
    """Decompose the last two axes into LL/LH/HL/HH subbands."""
    H, W = x.shape[-2], x.shape[-1]
    if H % 2 or W % 2 or H < 2 or W < 2:
        raise OddExtent(f"dwt2 requires even spatial extents >= 2, got {H}x{W}")
    stacked = _from_op(_dwt_core(x.data), (x,), lambda g: (_iwt_core(g),))
    return WaveletBands(
        ll=stacked[0], lh=stacked[1], hl=stacked[2], hh=stacked[3],
        source_shape=(H, W),
    )


def iwt2(bands: WaveletBands) -> Tensor:
    """Exact inverse of dwt2."""
    shapes = {t.shape for t in bands}
    if len(shapes) != 1:
        raise ShapeMismatch(f"band shapes differ: {sorted(shapes)}")
    parts = [reshape(t, (1,) + t.shape) for t in bands]
    stacked = concat(parts, axis=0)
    return _from_op(_iwt_core(stacked.data), (stacked,), lambda g: (_dwt_core(g),))
