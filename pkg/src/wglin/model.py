"""The full two-branch network: wavelet-mediated interaction blocks,
two-stage cross-view fusion, branch classifiers and logit fusion.

Layout convention: multi-view batches are flattened view-major, i.e. the
leading axis of size V*B is ordered [view0 sample0..B-1, view1 sample0..B-1,
...], so reshape(V, B, ...) recovers per-view slabs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, RangeError, ShapeMismatch, VariantError
from .layers import (
    Conv2d,
    InitialEncoder,
    Linear,
    Module,
    PatchEmbed,
    ResidualConvBlock,
    TokenPrepender,
    TransformerBlock,
    multi_head_attention,
)
from .rng import Rng
from .layers import NonLocalFuse, init_weight
from .tensor import Tensor
from .wavelet import WaveletBands, dwt2, iwt2

VARIANTS = ("full", "no-wglim", "no-cvfm", "bc-only", "bt-only",
            "stage1-only", "stage2-only")


@dataclass
class ModelConfig:
    views: int = 4
    blocks: int = 2          # number of stacked interaction blocks
    image_channels: int = 3
    lesion_channels: int = 1
    conv_channels: int = 16
    height: int = 64
    width: int = 64
    patch: int = 4
    token_dim: int = 144
    heads: int = 9
    num_classes: int = 5
    alpha_init: float = 1.0

    @property
    def in_channels(self) -> int:
        return self.image_channels + self.lesion_channels

    @property
    def feat_h(self) -> int:
        return self.height // 4

    @property
    def feat_w(self) -> int:
        return self.width // 4

    @property
    def num_patches(self) -> int:
        return (self.feat_h // self.patch) * (self.feat_w // self.patch)

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def kernel_channels(self) -> int:
        return self.token_dim // 9

    def validate(self):
        c = self
        if min(c.views, c.blocks, c.image_channels, c.lesion_channels,
               c.conv_channels, c.height, c.width, c.patch, c.token_dim,
               c.heads, c.num_classes) < 1:
            raise ConfigError("all config extents must be positive")
        if c.token_dim % c.heads:
            raise ConfigError(f"token_dim {c.token_dim} not divisible by heads {c.heads}")
        if c.token_dim % 9:
            raise ConfigError(
                f"token_dim {c.token_dim} not divisible by 9: the classification "
                "token must reshape into 3x3 dynamic kernels")
        if c.height % 4 or c.width % 4:
            raise ConfigError("height and width must be divisible by 4")
        if c.feat_h % c.patch or c.feat_w % c.patch:
            raise ConfigError(
                f"feature map {c.feat_h}x{c.feat_w} not divisible by patch {c.patch}")
        if c.feat_h % 2 or c.feat_w % 2:
            raise ConfigError("feature map extents must be even for the wavelet step")
        ck = c.kernel_channels
        if ck > c.conv_channels or c.conv_channels % ck:
            raise ConfigError(
                f"kernel channels {ck} must divide conv_channels {c.conv_channels}")


def assemble_input(images: np.ndarray, lesions: np.ndarray) -> Tensor:
    """Standardize image channels, pass lesion channels through, concat.

    Each image channel is standardized to mean 0 / std 1 over its own pixels
    (std floored at 1e-6). Lesion maps must already lie in [0, 1] and are
    concatenated untouched.
    """
    images = np.asarray(images, dtype=np.float64)
    lesions = np.asarray(lesions, dtype=np.float64)
    if images.shape[0] != lesions.shape[0] or images.shape[2:] != lesions.shape[2:]:
        raise ShapeMismatch(f"images {images.shape} vs lesions {lesions.shape}")
    if lesions.min(initial=0.0) < 0.0 or lesions.max(initial=0.0) > 1.0:
        raise RangeError("lesion map values outside [0, 1]")
    mu = images.mean(axis=(2, 3), keepdims=True)
    sd = np.maximum(images.std(axis=(2, 3), keepdims=True), 1e-6)
    std = (images - mu) / sd
    return Tensor(np.concatenate([std, lesions], axis=1))


class Mlp(Module):
    """Two linear layers with a ReLU in between."""

    def __init__(self, rng: Rng, d_in: int, d_hidden: int, d_out: int):
        self.fc1 = Linear(rng, d_in, d_hidden)
        self.fc2 = Linear(rng, d_hidden, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class CvfmStage1(Module):
    """All-pairs cross-view attention with per-view projections.

    Each view gets its own Q/K/V matrices; every (i, j) pair is attended and
    a single shared MLP maps each pair output before summation over j.
    """

    def __init__(self, rng: Rng, views: int, d: int, heads: int):
        self.views = views
        self.heads = heads
        self.wq = [init_weight(rng, (d, d), d) for _ in range(views)]
        self.wk = [init_weight(rng, (d, d), d) for _ in range(views)]
        self.wv = [init_weight(rng, (d, d), d) for _ in range(views)]
        self.mlp = Mlp(rng, d, d, d)

    def __call__(self, f: Tensor) -> Tensor:
        """f: [V, B, L, D] -> [V, B, L, D]."""
        v = self.views
        qs = [T.matmul(f[i], self.wq[i]) for i in range(v)]
        ks = [T.matmul(f[i], self.wk[i]) for i in range(v)]
        vs = [T.matmul(f[i], self.wv[i]) for i in range(v)]
        outs = []
        for i in range(v):
            acc = None
            for j in range(v):
                att = multi_head_attention(qs[i], ks[j], vs[j], self.heads)
                term = self.mlp(att)
                acc = term if acc is None else T.add(acc, term)
            outs.append(T.reshape(acc, (1,) + acc.shape))
        return T.concat(outs, axis=0)


class CvfmStage2(Module):
    """Learnable-query redundancy reduction: one query attends to each view,
    per-view MLPs refine, outputs concatenate to width V*D."""

    def __init__(self, rng: Rng, views: int, seq_len: int, d: int):
        self.views = views
        self.d = d
        self.query = init_weight(rng, (seq_len, d), d)
        self.mlps = [Mlp(rng, d, d, d) for _ in range(views)]

    def __call__(self, f: Tensor) -> Tensor:
        """f: [V, B, L, D] -> [B, L, V*D]."""
        q = T.reshape(self.query, (1,) + self.query.shape)
        outs = []
        for i in range(self.views):
            fi = f[i]
            logits = T.scale(T.matmul(q, T.swapaxes(fi, -1, -2)),
                             1.0 / math.sqrt(self.d))
            att = T.matmul(T.softmax(logits, axis=-1), fi)
            outs.append(self.mlps[i](att))
        return T.concat(outs, axis=-1)


def dynamic_kernels_from_token(row: Tensor, conv_channels: int) -> Tensor:
    """Reshape a [B, D] token into [B, C_k, 3, 3] kernels, cyclically tiled
    to [B, conv_channels, 3, 3]."""
    b, d = row.shape
    ck = d // 9
    k = T.reshape(row, (b, ck, 3, 3))
    reps = conv_channels // ck
    if reps == 1:
        return k
    return T.concat([k] * reps, axis=1)


DELTA_KERNEL = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])


class WglimBlock(Module):
    """One interaction block: residual conv step, transformer step, and a
    token-driven depthwise convolution of the HH wavelet subband."""

    def __init__(self, rng: Rng, cfg: ModelConfig,
                 use_conv: bool = True, use_token: bool = True,
                 interact: bool = True):
        self.use_conv = use_conv
        self.use_token = use_token
        self.interact = interact and use_conv and use_token
        self.conv_channels = cfg.conv_channels
        if use_conv:
            self.res = ResidualConvBlock(rng, cfg.conv_channels)
        if use_token:
            self.tr = TransformerBlock(rng, cfg.token_dim, cfg.heads)
        # test hook: forces the dynamic kernels to a fixed [C,3,3] pattern
        self.kernel_override: np.ndarray | None = None

    def __call__(self, conv_feat: Tensor | None, tokens: Tensor | None):
        fc_hat = self.res(conv_feat) if self.use_conv else None
        ft = self.tr(tokens) if self.use_token else None
        if not self.interact:
            return fc_hat, ft
        bands = dwt2(fc_hat)
        if self.kernel_override is not None:
            b = fc_hat.shape[0]
            kern = Tensor(np.broadcast_to(
                self.kernel_override, (b, self.conv_channels, 3, 3)).copy())
        else:
            kern = dynamic_kernels_from_token(ft[:, 0, :], self.conv_channels)
        hh = T.sample_depthwise_conv2d(bands.hh, kern, pad=1)
        out = iwt2(WaveletBands(bands.ll, bands.lh, bands.hl, hh,
                                bands.source_shape))
        return out, ft


class Wglin(Module):
    """Full model. `variant` selects the ablation wiring."""

    def __init__(self, cfg: ModelConfig, variant: str = "full", seed: int = 0):
        cfg.validate()
        if variant not in VARIANTS:
            raise VariantError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.cfg = cfg
        self.variant = variant
        rng = Rng(seed)

        use_conv = variant != "bt-only"
        use_token = variant != "bc-only"
        interact = use_conv and use_token and variant != "no-wglim"
        self.use_conv = use_conv
        self.use_token = use_token

        self.encoder = InitialEncoder(rng, cfg.in_channels, cfg.conv_channels)
        if use_token:
            self.patch_embed = PatchEmbed(rng, cfg.conv_channels, cfg.patch,
                                          cfg.token_dim)
            self.token_prep = TokenPrepender(cfg.token_dim, cfg.num_patches)
        self.wglim = [WglimBlock(rng, cfg, use_conv, use_token, interact)
                      for _ in range(cfg.blocks)]
        if use_conv:
            self.view_convs = [Conv2d(rng, cfg.conv_channels, cfg.conv_channels,
                                      3, pad=1) for _ in range(cfg.views)]
            self.non_local = NonLocalFuse(rng, cfg.conv_channels)
            self.head_c = Linear(rng, cfg.conv_channels, cfg.num_classes)
        if use_token:
            d, v, l = cfg.token_dim, cfg.views, cfg.seq_len
            if variant in ("full", "no-wglim", "bt-only", "stage1-only"):
                self.stage1 = CvfmStage1(rng, v, d, cfg.heads)
            if variant in ("full", "no-wglim", "bt-only", "stage2-only"):
                self.stage2 = CvfmStage2(rng, v, l, d)
            head_in = d if variant == "stage1-only" else v * d
            self.head_t = Linear(rng, head_in, cfg.num_classes)
        if use_conv and use_token:
            self.alpha = Tensor(np.asarray(cfg.alpha_init), requires_grad=True)

    # -- branch tails --------------------------------------------------------

    def _conv_logits(self, conv_feat: Tensor) -> Tensor:
        cfg = self.cfg
        b = conv_feat.shape[0] // cfg.views
        per_view = T.reshape(conv_feat,
                             (cfg.views, b) + conv_feat.shape[1:])
        feats = [T.relu(self.view_convs[i](per_view[i]))
                 for i in range(cfg.views)]
        stacked = T.stack(feats, axis=0)                       # [V,B,C,H,W]
        fused = self.non_local(T.swapaxes(stacked, 0, 1))      # [B,C]
        return self.head_c(fused)

    def _token_logits(self, tokens: Tensor) -> Tensor:
        cfg = self.cfg
        b = tokens.shape[0] // cfg.views
        f = T.reshape(tokens, (cfg.views, b, cfg.seq_len, cfg.token_dim))
        if self.variant in ("full", "no-wglim", "bt-only"):
            out = self.stage2(self.stage1(f))          # [B, L, V*D]
            return self.head_t(out[:, 0, :])
        if self.variant == "stage1-only":
            out = T.tmean(self.stage1(f), axis=0)      # [B, L, D]
            return self.head_t(out[:, 0, :])
        if self.variant == "stage2-only":
            out = self.stage2(f)
            return self.head_t(out[:, 0, :])
        # no-cvfm: per-view mean pool over tokens, then concat across views
        pooled = T.tmean(f, axis=2)                    # [V, B, D]
        flat = T.reshape(T.swapaxes(pooled, 0, 1), (b, cfg.views * cfg.token_dim))
        return self.head_t(flat)

    # -- forward ---------------------------------------------------------------

    def forward(self, images: np.ndarray, lesions: np.ndarray):
        """Returns (conv_logits, token_logits, fused_logits); absent branch
        logits are None and the fused logits fall back to the present branch."""
        cfg = self.cfg
        x = assemble_input(images, lesions)
        if x.shape[0] % cfg.views:
            raise ShapeMismatch(
                f"leading extent {x.shape[0]} not a multiple of views {cfg.views}")
        fc = self.encoder(x)
        tokens = self.token_prep(self.patch_embed(fc)) if self.use_token else None
        conv_feat = fc if self.use_conv else None
        for block in self.wglim:
            conv_feat, tokens = block(conv_feat, tokens)
        pc = self._conv_logits(conv_feat) if self.use_conv else None
        pt = self._token_logits(tokens) if self.use_token else None
        if pc is not None and pt is not None:
            pf = fuse_logits(pc, pt, self.alpha)
        else:
            pf = pc if pc is not None else pt
        return pc, pt, pf

    __call__ = forward


def fuse_logits(pc: Tensor, pt: Tensor, alpha: Tensor) -> Tensor:
    """P_f = P_c + alpha * P_t with a learnable scalar alpha."""
    if pc.shape != pt.shape:
        raise ShapeMismatch(f"logit shapes differ: {pc.shape} vs {pt.shape}")
    return T.add(pc, T.mul(pt, alpha))
