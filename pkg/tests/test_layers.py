import math

import numpy as np
import pytest

from wglin import tensor as T
from wglin.errors import IndivisiblePatch, ShapeMismatch
from wglin.gradcheck import finite_difference_check
from wglin.layers import (
    Conv2d,
    InitialEncoder,
    LayerNorm,
    Linear,
    Module,
    NonLocalFuse,
    PatchEmbed,
    ResidualConvBlock,
    TokenPrepender,
    TransformerBlock,
    init_weight,
    multi_head_attention,
    zeros_param,
)
from wglin.rng import Rng
from wglin.tensor import Tensor

from conftest import rand, rand_away_from_zero


def mha_oracle(q, k, v, heads):
    """Explicit per-head, per-row attention computed with plain loops."""
    b, lq, d = q.shape
    lk = k.shape[1]
    dh = d // heads
    out = np.zeros((b, lq, d))
    for bi in range(b):
        for h in range(heads):
            qs = q[bi, :, h * dh:(h + 1) * dh]
            ks = k[bi, :, h * dh:(h + 1) * dh]
            vs = v[bi, :, h * dh:(h + 1) * dh]
            for i in range(lq):
                logits = np.array([qs[i] @ ks[j] for j in range(lk)]) / math.sqrt(dh)
                w = np.exp(logits - logits.max())
                w /= w.sum()
                out[bi, i, h * dh:(h + 1) * dh] = sum(w[j] * vs[j] for j in range(lk))
    return out


# -- parameter registry ------------------------------------------------------

class _Inner(Module):
    def __init__(self):
        self.w = zeros_param((2,))


class _Outer(Module):
    def __init__(self):
        self.inner = _Inner()
        self.items = [_Inner(), _Inner()]
        self.free = zeros_param((3,))
        self.plain = np.zeros(4)          # not a parameter


def test_named_parameters_walks_nesting():
    names = [n for n, _ in _Outer().named_parameters()]
    assert names == ["inner.w", "items.0.w", "items.1.w", "free"]


def test_init_is_seed_deterministic():
    a = Linear(Rng(7), 5, 3)
    b = Linear(Rng(7), 5, 3)
    assert np.array_equal(a.w.data, b.w.data)
    s = math.sqrt(1.0 / 5)
    assert np.all(np.abs(a.w.data) <= s)
    assert np.all(a.b.data == 0.0)


def test_zero_grad_clears(rng):
    lin = Linear(rng, 3, 2)
    T.tsum(lin(Tensor(rand(rng, 4, 3)))).backward()
    assert lin.w.grad is not None
    lin.zero_grad()
    assert lin.w.grad is None


# -- initial encoder ---------------------------------------------------------

def test_encoder_spatial_reduction(rng):
    enc = InitialEncoder(rng, 4, 16)
    out = enc(Tensor(rand(rng, 2, 4, 64, 64)))
    assert out.shape == (2, 16, 16, 16)


def test_encoder_zero_input_zero_output(rng):
    enc = InitialEncoder(rng, 4, 8)
    out = enc(Tensor(np.zeros((1, 4, 16, 16))))
    assert np.allclose(out.data, 0.0)


def test_encoder_shared_across_views(rng):
    enc = InitialEncoder(rng, 3, 4)
    x = rand(rng, 1, 3, 16, 16)
    both = enc(Tensor(np.concatenate([x, x], axis=0)))
    assert np.array_equal(both.data[0], both.data[1])
    # one parameter set total, not one per view
    assert [n for n, _ in enc.named_parameters()] == ["conv.w", "conv.b"]


def test_encoder_rejects_small_input(rng):
    with pytest.raises(ShapeMismatch):
        InitialEncoder(rng, 3, 4)(Tensor(np.zeros((1, 3, 8, 8))))


# -- patch embedding ---------------------------------------------------------

def test_patch_count(rng):
    pe = PatchEmbed(rng, 16, 4, 32)
    out = pe(Tensor(rand(rng, 2, 16, 16, 16)))
    assert out.shape == (2, 16, 32)


def test_patch_embed_zero_input_is_bias(rng):
    pe = PatchEmbed(rng, 3, 2, 8)
    out = pe(Tensor(np.zeros((1, 3, 4, 4))))
    assert np.allclose(out.data, pe.proj.b.data)


def test_patch_permutation_permutes_rows(rng):
    pe = PatchEmbed(rng, 2, 2, 6)
    x = rand(rng, 1, 2, 4, 4)
    swapped = x.copy()
    # patches on a 2x2 grid; swap patch (0,0) with patch (0,1)
    swapped[..., 0:2, 0:2], swapped[..., 0:2, 2:4] = \
        x[..., 0:2, 2:4].copy(), x[..., 0:2, 0:2].copy()
    a = pe(Tensor(x)).data
    b = pe(Tensor(swapped)).data
    assert np.allclose(a[0, 0], b[0, 1]) and np.allclose(a[0, 1], b[0, 0])
    assert np.allclose(a[0, 2:], b[0, 2:])


def test_patch_indivisible_rejected(rng):
    with pytest.raises(IndivisiblePatch):
        PatchEmbed(rng, 2, 3, 6)(Tensor(np.zeros((1, 2, 4, 4))))


# -- token prepending --------------------------------------------------------

def test_token_extends_sequence(rng):
    tp = TokenPrepender(8, 16)
    out = tp(Tensor(rand(rng, 3, 16, 8)))
    assert out.shape == (3, 17, 8)


def test_zero_token_row_equals_positional_row(rng):
    tp = TokenPrepender(4, 2)
    tp.pos.data[...] = rand(rng, 3, 4)
    out = tp(Tensor(rand(rng, 2, 2, 4)))
    assert np.allclose(out.data[:, 0, :], tp.pos.data[0])


def test_token_identical_across_batch(rng):
    tp = TokenPrepender(4, 2)
    out = tp(Tensor(rand(rng, 5, 2, 4)))
    assert all(np.array_equal(out.data[0, 0], out.data[i, 0]) for i in range(5))


# -- attention ---------------------------------------------------------------

def test_attention_matches_loop_oracle(rng):
    for heads, l, d in ((1, 3, 4), (2, 5, 6), (3, 4, 9)):
        q, k, v = (rand(rng, 2, l, d) for _ in range(3))
        got = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), heads)
        assert np.max(np.abs(got.data - mha_oracle(q, k, v, heads))) < 1e-12


def test_single_token_attention_is_identity(rng):
    q, k, v = (rand(rng, 2, 1, 6) for _ in range(3))
    out = multi_head_attention(Tensor(q), Tensor(k), Tensor(v), 2)
    assert np.max(np.abs(out.data - v)) < 1e-12


def test_transformer_block_preserves_shape(rng):
    blk = TransformerBlock(rng, 6, 2)
    x = rand(rng, 3, 5, 6)
    assert blk(Tensor(x)).shape == (3, 5, 6)


def test_transformer_zero_projections_keep_shape(rng):
    blk = TransformerBlock(rng, 6, 3)
    for lin in (blk.wq, blk.wk, blk.wv, blk.wo, blk.ff1, blk.ff2):
        lin.w.data[...] = 0.0
    out = blk(Tensor(rand(rng, 2, 4, 6)))
    assert out.shape == (2, 4, 6)


def test_transformer_rejects_bad_head_count(rng):
    with pytest.raises(ShapeMismatch):
        TransformerBlock(rng, 7, 2)


def test_transformer_gradient(rng):
    blk = TransformerBlock(rng, 4, 2)
    x = Tensor(rand(rng, 1, 3, 4), requires_grad=True)
    params = [x] + blk.parameters()
    w = rand(rng, 1, 3, 4)

    def f():
        return T.tsum(T.mul(blk(x), Tensor(w)))

    assert finite_difference_check(f, params, rng=rng) < 1e-4


# -- residual conv block -----------------------------------------------------

def test_residual_block_zero_input(rng):
    blk = ResidualConvBlock(rng, 3)
    out = blk(Tensor(np.zeros((1, 3, 4, 4))))
    assert np.allclose(out.data, 0.0)


def test_residual_block_skip_path_identity(rng):
    blk = ResidualConvBlock(rng, 2)
    blk.conv1a.w.data[...] = 0.0
    blk.conv1b.w.data[...] = 0.0
    blk.conv1c.w.data[...] = 0.0
    blk.conv2.w.data[...] = np.eye(2).reshape(2, 2, 1, 1)
    x = rand(rng, 2, 2, 4, 4, low=0.0, high=1.0)   # final ReLU is a no-op here
    assert np.max(np.abs(blk(Tensor(x)).data - x)) < 1e-12


def test_residual_block_preserves_shape(rng):
    for c, h, w in ((1, 2, 2), (3, 4, 6), (5, 8, 8)):
        blk = ResidualConvBlock(rng, c)
        assert blk(Tensor(rand(rng, 2, c, h, w))).shape == (2, c, h, w)


def test_residual_block_gradient(rng):
    blk = ResidualConvBlock(rng, 2)
    x = Tensor(rand_away_from_zero(rng, 1, 2, 4, 4), requires_grad=True)
    w = rand(rng, 1, 2, 4, 4)

    def f():
        return T.tsum(T.mul(blk(x), Tensor(w)))

    assert finite_difference_check(f, [x] + blk.parameters(), rng=rng) < 1e-4


# -- non-local fusion --------------------------------------------------------

def test_non_local_output_shape(rng):
    nl = NonLocalFuse(rng, 4)
    out = nl(Tensor(rand(rng, 2, 3, 4, 2, 2)))
    assert out.shape == (2, 4)


def test_non_local_view_permutation_invariant(rng):
    nl = NonLocalFuse(rng, 4)
    x = rand(rng, 2, 3, 4, 2, 2)
    base = nl(Tensor(x)).data
    perm = nl(Tensor(x[:, [2, 0, 1]])).data
    assert np.max(np.abs(base - perm)) < 1e-9


def test_non_local_identical_views_symmetric(rng):
    nl = NonLocalFuse(rng, 2)
    one = rand(rng, 2, 1, 2, 2, 2)
    four = np.repeat(one, 4, axis=1)
    out = nl(Tensor(four))
    assert np.all(np.isfinite(out.data)) and out.shape == (2, 2)


def test_non_local_gradient(rng):
    nl = NonLocalFuse(rng, 2)
    x = Tensor(rand(rng, 1, 2, 2, 2, 2), requires_grad=True)

    def f():
        return T.tsum(nl(x))

    assert finite_difference_check(f, [x] + nl.parameters(), rng=rng) < 1e-4


# -- layer norm wrapper ------------------------------------------------------

def test_layernorm_affine(rng):
    ln = LayerNorm(5)
    ln.gain.data[...] = 2.0
    ln.bias.data[...] = 1.0
    out = ln(Tensor(rand(rng, 3, 5)))
    assert np.allclose(out.data.mean(axis=-1), 1.0, atol=1e-9)


def test_conv2d_bias_broadcast(rng):
    conv = Conv2d(rng, 2, 3, 3, pad=1)
    conv.b.data[...] = [1.0, 2.0, 3.0]
    out = conv(Tensor(np.zeros((1, 2, 4, 4))))
    assert np.allclose(out.data[0, 0], 1.0) and np.allclose(out.data[0, 2], 3.0)


def test_init_weight_bounds(rng):
    w = init_weight(rng, (100,), 4)
    assert np.all(np.abs(w.data) <= 0.5) and w.requires_grad
