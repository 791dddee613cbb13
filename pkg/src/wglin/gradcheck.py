"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import NonFinite
from .rng import Rng
from .tensor import Tensor


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords_per_param: int = 4,
    rng: Rng | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be a deterministic closure over `params` returning a scalar
    Tensor. Returns max over probed coordinates of
    |analytic - central| / max(1, |central|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    rng = rng or Rng(0)

    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = []
    for p in params:
        if p.grad is None:
            analytic.append(np.zeros_like(p.data))
        else:
            analytic.append(p.grad.copy())
        p.zero_grad()

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords_per_param:
            coords = range(n)
        else:
            coords = sorted({rng.randrange(n) for _ in range(max_coords_per_param)})
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            f1 = f().item()
            flat[idx] = orig - eps
            f2 = f().item()
            flat[idx] = orig
            if not (math.isfinite(f1) and math.isfinite(f2)):
                raise NonFinite("finite-difference probe produced NaN/Inf")
            central = (f1 - f2) / (2.0 * eps)
            rel = abs(a.reshape(-1)[idx] - central) / max(1.0, abs(central))
            worst = max(worst, rel)
    return worst
