"""Cross-temporal, cross-modal change feature extraction.

Level 1 uses a convolutional channel-attention block; levels 2-4 use a
hierarchical block that chains a difference-aware state space mixer and a
cross-channel attention layer, each followed by an MLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import BatchNorm, Conv2d, ConvNormAct, LayerNorm, Linear, ParamStore, Tensor, ops
from .encoder import FeaturePyramid
from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class ChangeConfig:
    d_state: int = 8
    expand: int = 2
    conv_kernel: int = 3
    heads: int = 4
    mlp_ratio: int = 2
    attn_reduction: int = 4
    dt_init: float = 0.1
    use_ccab: bool = True
    use_dssm: bool = True
    use_cca: bool = True


def to_tokens(f: Tensor) -> Tensor:
    """[C,H,W] -> [H*W, C], row-major over space."""
    c, h, w = f.shape
    return f.reshape(c, h * w).transpose(1, 0)


def to_map(x: Tensor, h: int, w: int) -> Tensor:
    return x.transpose(1, 0).reshape(x.shape[1], h, w)


def _check_pair(f_dsm: Tensor, f_img: Tensor) -> None:
    if f_dsm.shape != f_img.shape:
        raise DimensionError(f"DSM {f_dsm.shape} and image {f_img.shape} features differ in shape")


class CCAB:
    def __init__(self, store: ParamStore, name: str, channels: int, reduction: int = 4):
        c2 = 2 * channels
        if c2 % reduction:
            raise ConfigurationError(f"reduction {reduction} must divide {c2}")
        self.enhance = ConvNormAct(store, f"{name}.enhance", c2, c2, k=3, act="gelu")
        self.w1 = Linear(store, f"{name}.attn.w1", c2, c2 // reduction)
        self.w2 = Linear(store, f"{name}.attn.w2", c2 // reduction, c2)
        self.reduce = Conv2d(store, f"{name}.reduce", c2, channels, 1)

    def attention(self, x_enh: Tensor) -> Tensor:
        pooled = ops.global_avg_pool(x_enh).reshape(1, -1)
        a = self.w2(ops.gelu(self.w1(pooled)))
        return ops.sigmoid(a).reshape(-1)

    def block(self, f_dsm: Tensor, f_img: Tensor) -> tuple[Tensor, Tensor]:
        """Pre-reduction output X + X~ * a, and the channel weights a."""
        _check_pair(f_dsm, f_img)
        x = ops.concat([f_dsm, f_img], axis=0)
        x_enh = self.enhance(x)
        a = self.attention(x_enh)
        return x + x_enh * a.reshape(-1, 1, 1), a

    def __call__(self, f_dsm: Tensor, f_img: Tensor) -> Tensor:
        return self.reduce(self.block(f_dsm, f_img)[0])


class PlainConvFusion:
    """Ablation stand-in for CCAB: conv-norm-GELU on the concatenation, then reduce."""

    def __init__(self, store: ParamStore, name: str, channels: int):
        self.fuse = ConvNormAct(store, f"{name}.fuse", 2 * channels, 2 * channels, k=3, act="gelu")
        self.reduce = Conv2d(store, f"{name}.reduce", 2 * channels, channels, 1)

    def __call__(self, f_dsm: Tensor, f_img: Tensor) -> Tensor:
        _check_pair(f_dsm, f_img)
        return self.reduce(self.fuse(ops.concat([f_dsm, f_img], axis=0)))


class DSSM:
    """Difference-aware state space mixer over flattened bi-temporal features."""

    def __init__(self, store: ParamStore, name: str, channels: int, cfg: ChangeConfig = ChangeConfig()):
        d_model = 2 * channels
        d_inner = cfg.expand * d_model
        n = cfg.d_state
        k = cfg.conv_kernel
        self.d_inner, self.d_state = d_inner, n
        self.in_proj = Linear(store, f"{name}.in_proj", d_model, d_inner)
        self.conv_w = store.create(f"{name}.conv.weight", (d_inner, k), fan_in=k)
        self.conv_b = store.create(f"{name}.conv.bias", (d_inner,), fan_in=k)
        self.dt_proj = Linear(store, f"{name}.dt_proj", d_inner, d_inner)
        # softplus(bias) == dt_init at initialisation
        self.dt_proj.bias.data[:] = math.log(math.expm1(cfg.dt_init))
        self.b_proj = Linear(store, f"{name}.b_proj", d_inner, n)
        self.c_proj = Linear(store, f"{name}.c_proj", d_inner, n)
        a_init = np.log(np.tile(np.arange(1, n + 1, dtype=np.float64), (d_inner, 1)))
        self.a_log = store.create(f"{name}.a_log", (d_inner, n), init=a_init)
        self.diff_proj = Linear(store, f"{name}.diff_proj", channels, d_inner)
        self.diff_conv_w = store.create(f"{name}.diff_conv.weight", (d_inner, k), fan_in=k)
        self.diff_conv_b = store.create(f"{name}.diff_conv.bias", (d_inner,), fan_in=k)
        self.out_proj = Linear(store, f"{name}.out_proj", 2 * d_inner, d_model)

    def a_matrix(self) -> Tensor:
        """State matrix, kept strictly negative by construction."""
        return ops.mul(ops.exp(self.a_log), -1.0)

    def main_branch(self, x_seq: Tensor) -> Tensor:
        return ops.silu(ops.conv1d_causal(self.in_proj(x_seq), self.conv_w, self.conv_b))

    def selective_scan(self, s: Tensor) -> Tensor:
        delta = ops.softplus(self.dt_proj(s))
        return ops.scan(s, delta, self.a_matrix(), self.b_proj(s), self.c_proj(s))

    def diff_branch(self, diff_seq: Tensor) -> Tensor:
        return ops.silu(ops.conv1d_causal(self.diff_proj(diff_seq), self.diff_conv_w, self.diff_conv_b))

    def __call__(self, f_dsm: Tensor, f_img: Tensor) -> Tensor:
        _check_pair(f_dsm, f_img)
        x_seq = to_tokens(ops.concat([f_dsm, f_img], axis=0))
        s_tilde = self.selective_scan(self.main_branch(x_seq))
        d = self.diff_branch(to_tokens(f_img - f_dsm))  # image minus DSM
        return self.out_proj(ops.concat([s_tilde, d], axis=1))


class CCA:
    """Multi-head attention over channels: each head builds a d x d map from Q^T K."""

    def __init__(self, store: ParamStore, name: str, channels: int, heads: int = 4):
        if channels % heads:
            raise ConfigurationError(f"{heads} heads do not divide {channels} channels")
        self.heads = heads
        self.head_dim = channels // heads
        self.qkv = Linear(store, f"{name}.qkv", channels, 3 * channels)
        self.proj = Linear(store, f"{name}.proj", channels, channels)

    def attention(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (projected output, attention maps [h, d, d])."""
        length, c = x.shape
        h, d = self.heads, self.head_dim
        qkv = self.qkv(x).reshape(length, 3, h, d).transpose(1, 2, 0, 3)  # [3, h, L, d]
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = ops.softmax((q.transpose(0, 2, 1) @ k) * (1.0 / math.sqrt(d)))  # [h, d, d]
        out = (attn @ v.transpose(0, 2, 1)).transpose(2, 0, 1).reshape(length, c)  # [L, C]
        return self.proj(out), attn

    def __call__(self, x: Tensor, residual: bool = True) -> Tensor:
        out = self.attention(x)[0]
        return x + out if residual else out


class MLP:
    def __init__(self, store: ParamStore, name: str, channels: int, hidden: int):
        self.fc1 = Linear(store, f"{name}.fc1", channels, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, channels)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class TokenMixerStandIn:
    """Ablation stand-in for DSSM: an MLP over the concatenated tokens."""

    def __init__(self, store: ParamStore, name: str, channels: int, cfg: ChangeConfig):
        d_model = 2 * channels
        self.mlp = MLP(store, name, d_model, cfg.expand * d_model)

    def __call__(self, f_dsm: Tensor, f_img: Tensor) -> Tensor:
        _check_pair(f_dsm, f_img)
        return self.mlp(to_tokens(ops.concat([f_dsm, f_img], axis=0)))


class HCFEB:
    def __init__(self, store: ParamStore, name: str, channels: int, cfg: ChangeConfig = ChangeConfig()):
        c2 = 2 * channels
        hidden = cfg.mlp_ratio * c2
        if cfg.use_dssm:
            self.mixer = DSSM(store, f"{name}.dssm", channels, cfg)
        else:
            self.mixer = TokenMixerStandIn(store, f"{name}.mixer", channels, cfg)
        self.norm1 = LayerNorm(store, f"{name}.norm1", c2)
        self.mlp1 = MLP(store, f"{name}.mlp1", c2, hidden)
        self.norm2 = LayerNorm(store, f"{name}.norm2", c2)
        self.cca = CCA(store, f"{name}.cca", c2, cfg.heads) if cfg.use_cca else None
        self.channel_mix = None if cfg.use_cca else Linear(store, f"{name}.channel_mix", c2, c2)
        self.norm3 = LayerNorm(store, f"{name}.norm3", c2)
        self.mlp2 = MLP(store, f"{name}.mlp2", c2, hidden)
        self.reduce = Conv2d(store, f"{name}.reduce", c2, channels, 1)

    def tokens(self, f_dsm: Tensor, f_img: Tensor) -> Tensor:
        _check_pair(f_dsm, f_img)
        x = to_tokens(ops.concat([f_dsm, f_img], axis=0))
        u = x + self.mixer(f_dsm, f_img)
        v = u + self.mlp1(self.norm1(u))
        vn = self.norm2(v)
        w = v + (self.cca(vn, residual=False) if self.cca is not None else self.channel_mix(vn))
        return w + self.mlp2(self.norm3(w))

    def __call__(self, f_dsm: Tensor, f_img: Tensor) -> Tensor:
        _, h, w = f_dsm.shape
        return self.reduce(to_map(self.tokens(f_dsm, f_img), h, w))


class ChangeExtractor:
    def __init__(self, store: ParamStore, channels: list[int], cfg: ChangeConfig = ChangeConfig(), name: str = "change"):
        if cfg.use_ccab:
            self.level1 = CCAB(store, f"{name}.level1.ccab", channels[0], cfg.attn_reduction)
        else:
            self.level1 = PlainConvFusion(store, f"{name}.level1.plain", channels[0])
        self.deep = [HCFEB(store, f"{name}.level{i + 1}.hcfeb", channels[i], cfg) for i in range(1, 4)]

    def change_pyramid(self, dsm: FeaturePyramid, img_fused: FeaturePyramid) -> list[Tensor]:
        if len(dsm) != 4 or len(img_fused) != 4:
            raise DimensionError("change extraction needs two 4-level pyramids")
        out = [self.level1(dsm[0], img_fused[0])]
        out += [blk(dsm[i + 1], img_fused[i + 1]) for i, blk in enumerate(self.deep)]
        return out

    __call__ = change_pyramid
