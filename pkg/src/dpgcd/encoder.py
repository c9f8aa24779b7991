"""Shared hierarchical encoder and raster-to-grayscale conversion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .autodiff import ConvNormAct, ParamStore, Tensor, no_grad, ops
from .errors import ConfigurationError, DataError, DimensionError


@dataclass(frozen=True)
class EncoderConfig:
    stem_channels: int = 16
    blocks_per_stage: int = 2
    in_channels: int = 3

    @property
    def stage_channels(self) -> list[int]:
        c = self.stem_channels
        return [c, 2 * c, 4 * c, 8 * c]

    # feature scale of each stage relative to the input
    stage_strides = (4, 8, 16, 32)


@dataclass
class FeaturePyramid:
    levels: list[Tensor]

    def __post_init__(self):
        if len(self.levels) != 4:
            raise DimensionError(f"a pyramid has 4 levels, got {len(self.levels)}")

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.levels)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [t.shape for t in self.levels]


def normalize_raster_to_gray(raster, replicate: bool = True) -> Tensor:
    """Min-max scale one raster tile to [0, 1].

    A flat tile maps to zeros. Non-finite cells are ignored for the range and
    written as 0. With ``replicate`` the gray map is copied to 3 channels so
    the image stem can consume it.
    """
    r = np.asarray(raster, dtype=np.float64)
    if r.ndim == 3:
        if r.shape[0] != 1:
            raise DimensionError(f"expected a single-channel raster, got {r.shape}")
        r = r[0]
    if r.ndim != 2:
        raise DimensionError(f"expected [H,W] raster, got {r.shape}")
    finite = np.isfinite(r)
    if not finite.any():
        raise DataError("raster has no finite values")
    lo, hi = r[finite].min(), r[finite].max()
    if hi > lo:
        out = (r - lo) / (hi - lo)
    else:
        out = np.zeros_like(r)
    out = np.where(finite, out, 0.0)
    out = out[None]
    if replicate:
        out = np.repeat(out, 3, axis=0)
    return Tensor(out)


class ResidualBlock:
    def __init__(self, store: ParamStore, name: str, channels: int):
        self.body = ConvNormAct(store, name, channels, channels, k=3, act="gelu")

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.body(x)


class Encoder:
    """Plain residual conv backbone: a stride-4 stem, then three stride-2 stages.

    One instance serves every modality, so image and DSM branches read the same
    parameter objects.
    """

    def __init__(self, store: ParamStore, config: EncoderConfig = EncoderConfig(), name: str = "encoder"):
        self.config = config
        self.name = name
        chans = config.stage_channels
        self.stem = ConvNormAct(store, f"{name}.stem", config.in_channels, chans[0], k=5, stride=4)
        self.down: list[ConvNormAct | None] = [None]
        for i in range(1, 4):
            self.down.append(ConvNormAct(store, f"{name}.stage{i + 1}.down", chans[i - 1], chans[i], k=3, stride=2))
        self.blocks = [
            [ResidualBlock(store, f"{name}.stage{i + 1}.block{j}", chans[i]) for j in range(config.blocks_per_stage)]
            for i in range(4)
        ]

    def encode(self, x: Tensor) -> FeaturePyramid:
        if x.ndim != 3 or x.shape[0] != self.config.in_channels:
            raise DimensionError(f"encoder expects [{self.config.in_channels},H,W], got {x.shape}")
        _, h, w = x.shape
        if h % 32 or w % 32:
            raise ConfigurationError(f"input extent {h}x{w} must be divisible by 32")
        levels = []
        f = self.stem(x)
        for i in range(4):
            if i > 0:
                f = self.down[i](f)
            for block in self.blocks[i]:
                f = block(f)
            levels.append(f)
        return FeaturePyramid(levels)

    __call__ = encode

    def encode_frozen(self, x: Tensor) -> FeaturePyramid:
        """Same forward math as :meth:`encode`; nothing flows back into the weights."""
        with no_grad():
            return self.encode(x)
