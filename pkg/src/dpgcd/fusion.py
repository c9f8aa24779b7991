"""Gated injection of depth-prior features into image features."""

from __future__ import annotations

from .autodiff import BatchNorm, Conv2d, ParamStore, Tensor, ops
from .encoder import FeaturePyramid
from .errors import DimensionError


class GateFusionLevel:
    def __init__(self, store: ParamStore, name: str, channels: int):
        c = channels
        self.t_img = Conv2d(store, f"{name}.t_img", c, c, 3)
        self.t_edm = Conv2d(store, f"{name}.t_edm", c, c, 3)
        # gate mapping: conv 3x3 -> norm -> GELU -> conv 1x1 to one channel
        self.gate_conv1 = Conv2d(store, f"{name}.gate.conv1", 2 * c, max(c // 2, 1), 3, bias=False)
        self.gate_bn = BatchNorm(store, f"{name}.gate.bn", max(c // 2, 1))
        self.gate_conv2 = Conv2d(store, f"{name}.gate.conv2", max(c // 2, 1), 1, 1)
        # refinement: conv 3x3 -> norm -> ReLU
        self.refine_conv = Conv2d(store, f"{name}.refine.conv", c, c, 3, bias=False)
        self.refine_bn = BatchNorm(store, f"{name}.refine.bn", c)

    def transform(self, f_img: Tensor, f_edm: Tensor) -> tuple[Tensor, Tensor]:
        if f_img.shape != f_edm.shape:
            raise DimensionError(f"image {f_img.shape} and depth {f_edm.shape} features differ in shape")
        return self.t_img(f_img), self.t_edm(f_edm)

    def gate(self, f_img_t: Tensor, f_edm_t: Tensor) -> Tensor:
        if f_img_t.shape != f_edm_t.shape:
            raise DimensionError(f"gate inputs differ in shape: {f_img_t.shape} vs {f_edm_t.shape}")
        x = ops.concat([f_edm_t, f_img_t], axis=0)  # depth first
        x = ops.gelu(self.gate_bn(self.gate_conv1(x)))
        return ops.sigmoid(self.gate_conv2(x))

    def refine(self, x: Tensor) -> Tensor:
        return ops.relu(self.refine_bn(self.refine_conv(x)))

    def __call__(self, f_img: Tensor, f_edm: Tensor) -> Tensor:
        ti, te = self.transform(f_img, f_edm)
        m = self.gate(ti, te)
        fused = ti + m * te
        return self.refine(fused) + f_img


class DepthFusion:
    """Per-level gated fusion; with ``enabled=False`` the image pyramid passes through."""

    def __init__(self, store: ParamStore, channels: list[int], enabled: bool = True, name: str = "fusion"):
        self.enabled = enabled
        self.levels = [GateFusionLevel(store, f"{name}.level{i + 1}", c) for i, c in enumerate(channels)] if enabled else []

    def transform_level(self, i: int, f_img: Tensor, f_edm: Tensor) -> tuple[Tensor, Tensor]:
        return self.levels[i].transform(f_img, f_edm)

    def gate_map(self, i: int, f_img_t: Tensor, f_edm_t: Tensor) -> Tensor:
        return self.levels[i].gate(f_img_t, f_edm_t)

    def fuse_level(self, i: int, f_img: Tensor, f_edm: Tensor) -> Tensor:
        return self.levels[i](f_img, f_edm)

    def fuse_pyramid(self, img: FeaturePyramid, edm: FeaturePyramid | None) -> FeaturePyramid:
        if not self.enabled:
            return img
        if edm is None or len(edm) != len(img):
            raise DimensionError("depth pyramid missing or level count differs from the image pyramid")
        return FeaturePyramid([self.fuse_level(i, fi, fe) for i, (fi, fe) in enumerate(zip(img, edm))])

    __call__ = fuse_pyramid
