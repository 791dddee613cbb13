import numpy as np
import pytest

from wglin.gradcheck import finite_difference_check
from wglin.model import ModelConfig
from wglin.rng import Rng


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def tiny_config():
    """Smallest valid config: quick forward passes for gradient checks."""
    return ModelConfig(views=2, blocks=1, height=16, width=16,
                       image_channels=3, lesion_channels=1, conv_channels=2,
                       patch=2, token_dim=9, heads=3, num_classes=3)


def rand(rng: Rng, *shape, low=-1.0, high=1.0) -> np.ndarray:
    return rng.fill_uniform(shape, low, high)


def rand_away_from_zero(rng: Rng, *shape, margin=0.05) -> np.ndarray:
    """Uniform values kept at least `margin` from 0 (kink avoidance)."""
    x = rng.fill_uniform(shape, -1.0, 1.0)
    return np.where(x >= 0, x + margin, x - margin)


def fd_check_kink_tolerant(f, params, rng, max_coords_per_param=4):
    """Finite-difference check retried at shrinking eps.

    A probe that lands within eps of a ReLU/maxpool kink produces a large
    one-sided error that vanishes as eps shrinks; a wrong analytic gradient
    does not. Take the best of three probe widths.
    """
    best = np.inf
    for eps in (1e-5, 1e-6, 1e-7):
        err = finite_difference_check(f, params, eps=eps,
                                      max_coords_per_param=max_coords_per_param,
                                      rng=rng.spawn())
        best = min(best, err)
        if best < 1e-4:
            break
    return best
