"""UPerNet-style change decoder, 2D/3D heads and the auxiliary DSM decoder."""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import Conv2d, ConvNormAct, ParamStore, Tensor, ops
from .encoder import FeaturePyramid
from .errors import ConfigurationError, DimensionError

# Decoder convs pad by edge replication so spatially constant inputs stay constant.
PAD = "replicate"


@dataclass(frozen=True)
class DecoderConfig:
    fusion_width: int = 64
    pool_scales: tuple[int, ...] = (1, 2, 3, 6)
    num_2d_classes: int = 3
    head_width: int = 32

    def __post_init__(self):
        if self.num_2d_classes < 2:
            raise ConfigurationError("at least 2 change classes are required")


@dataclass
class PredictionTriple:
    logits_2d: Tensor
    height_3d: Tensor
    dsm_t2: Tensor


def _resize(x: Tensor, h: int, w: int) -> Tensor:
    return ops.upsample_bilinear(x, h, w)


class UPerFuse:
    def __init__(self, store: ParamStore, in_channels: list[int], cfg: DecoderConfig = DecoderConfig(), name: str = "uper"):
        width = cfg.fusion_width
        c4 = in_channels[3]
        self.pool_scales = cfg.pool_scales
        # pooled branches carry no norm: at scale 1 a per-map norm would erase them
        self.ppm = [Conv2d(store, f"{name}.ppm{s}", c4, width, 1) for s in cfg.pool_scales]
        self.bottleneck = ConvNormAct(
            store, f"{name}.bottleneck", c4 + len(cfg.pool_scales) * width, width, 3, act="relu", padding_mode=PAD
        )
        self.lateral = [
            ConvNormAct(store, f"{name}.lateral{i + 1}", in_channels[i], width, 1, act="relu") for i in range(3)
        ]
        self.fpn = [
            ConvNormAct(store, f"{name}.fpn{i + 1}", width, width, 3, act="relu", padding_mode=PAD) for i in range(3)
        ]
        self.fuse = ConvNormAct(store, f"{name}.fuse", 4 * width, width, 3, act="relu", padding_mode=PAD)

    def pyramid_pooling(self, f4: Tensor) -> Tensor:
        _, h, w = f4.shape
        branches = [f4]
        for s, conv in zip(self.pool_scales, self.ppm):
            pooled = ops.relu(conv(ops.adaptive_avg_pool(f4, s)))
            if (s, s) == (h, w):
                branches.append(pooled)
            elif s <= h and s <= w:
                branches.append(ops.upsample_bilinear(pooled, h, w))
            else:
                # pooled grid finer than the map itself: average back down
                branches.append(ops.adaptive_avg_pool(pooled, h, w))
        return self.bottleneck(ops.concat(branches, axis=0))

    def __call__(self, change: list[Tensor]) -> Tensor:
        if len(change) != 4:
            raise DimensionError(f"UPer fusion expects 4 levels, got {len(change)}")
        lat = [self.lateral[i](change[i]) for i in range(3)] + [self.pyramid_pooling(change[3])]
        for i in range(2, -1, -1):
            _, h, w = lat[i].shape
            lat[i] = lat[i] + _resize(lat[i + 1], h, w)
        outs = [self.fpn[i](lat[i]) for i in range(3)] + [lat[3]]
        _, h, w = outs[0].shape
        return self.fuse(ops.concat([outs[0]] + [_resize(o, h, w) for o in outs[1:]], axis=0))


class PredictionHead:
    """Upsample first, then conv 3x3 -> norm -> ReLU -> conv 1x1 (no output activation)."""

    def __init__(self, store: ParamStore, name: str, width: int, hidden: int, out_channels: int, scale: int = 4):
        self.scale = scale
        self.conv = ConvNormAct(store, f"{name}.conv", width, hidden, 3, act="relu", padding_mode=PAD)
        self.out = Conv2d(store, f"{name}.out", hidden, out_channels, 1)

    def __call__(self, f: Tensor) -> Tensor:
        _, h, w = f.shape
        up = ops.upsample_bilinear(f, h * self.scale, w * self.scale)
        return self.out(self.conv(up))


class DSMDecoder:
    """Light FPN: align channels, top-down add, concat at 1/4 scale, fuse, upsample, 1x1 head."""

    def __init__(self, store: ParamStore, in_channels: list[int], cfg: DecoderConfig = DecoderConfig(), name: str = "dsm_decoder"):
        width = cfg.fusion_width
        self.align = [Conv2d(store, f"{name}.align{i + 1}", c, width, 1) for i, c in enumerate(in_channels)]
        self.fuse = ConvNormAct(store, f"{name}.fuse", 4 * width, width, 3, act="relu", padding_mode=PAD)
        self.head = Conv2d(store, f"{name}.head", width, 1, 1)

    def __call__(self, img_fused: FeaturePyramid) -> Tensor:
        lat = [conv(f) for conv, f in zip(self.align, img_fused)]
        for i in range(2, -1, -1):
            _, h, w = lat[i].shape
            lat[i] = lat[i] + _resize(lat[i + 1], h, w)
        _, h, w = lat[0].shape
        f = self.fuse(ops.concat([lat[0]] + [_resize(t, h, w) for t in lat[1:]], axis=0))
        return self.head(ops.upsample_bilinear(f, 4 * h, 4 * w))


class MultiTaskDecoder:
    def __init__(self, store: ParamStore, in_channels: list[int], cfg: DecoderConfig = DecoderConfig()):
        self.cfg = cfg
        self.uper = UPerFuse(store, in_channels, cfg)
        self.head_2d = PredictionHead(store, "head_2d", cfg.fusion_width, cfg.head_width, cfg.num_2d_classes)
        self.head_3d = PredictionHead(store, "head_3d", cfg.fusion_width, cfg.head_width, 1)
        self.dsm = DSMDecoder(store, in_channels, cfg)

    def uper_fuse(self, change: list[Tensor]) -> Tensor:
        return self.uper(change)

    def __call__(self, change: list[Tensor], img_fused: FeaturePyramid) -> PredictionTriple:
        f = self.uper(change)
        return PredictionTriple(self.head_2d(f), self.head_3d(f), self.dsm(img_fused))
