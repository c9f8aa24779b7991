"""End-to-end network: encode, fuse, extract change, decode."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import ParamStore, Tensor
from .change import ChangeConfig, ChangeExtractor
from .decoder import DecoderConfig, MultiTaskDecoder, PredictionTriple
from .encoder import Encoder, EncoderConfig, FeaturePyramid, normalize_raster_to_gray
from .errors import ConfigurationError
from .fusion import DepthFusion
from .losses import ChangeMask, LossConfig, derive_dsm_gt, grad_loss, mse, total_loss, weighted_ce


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    change: ChangeConfig = field(default_factory=ChangeConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    use_edp: bool = True
    dtype: str = "float64"
    seed: int = 0
    # "sample": norm layers use each tile's own statistics at inference, as in training
    eval_norm: str = "sample"

    def ablate(self, edp=True, ccab=True, dssm=True, cca=True) -> "ModelConfig":
        ch = replace(self.change, use_ccab=ccab, use_dssm=dssm, use_cca=cca)
        return replace(self, use_edp=edp, change=ch)


@dataclass
class ModelInputs:
    dsm: Tensor
    img: Tensor
    edm: Tensor | None


class DPGCD:
    def __init__(self, config: ModelConfig = ModelConfig()):
        self.config = config
        if config.eval_norm not in ("sample", "running"):
            raise ConfigurationError(f"eval_norm must be 'sample' or 'running', got {config.eval_norm!r}")
        self.store = ParamStore(seed=config.seed, dtype=np.dtype(config.dtype))
        self.store.running_stats_in_eval = config.eval_norm == "running"
        chans = config.encoder.stage_channels
        self.encoder = Encoder(self.store, config.encoder)
        self.fusion = DepthFusion(self.store, chans, enabled=config.use_edp)
        self.change = ChangeExtractor(self.store, chans, config.change)
        self.decoder = MultiTaskDecoder(self.store, chans, config.decoder)

    @property
    def dtype(self):
        return self.store.dtype

    def train(self, flag: bool = True) -> "DPGCD":
        self.store.training = flag
        return self

    def eval(self) -> "DPGCD":
        return self.train(False)

    def prepare(self, dsm_t1, img_t2, depth_prior) -> ModelInputs:
        dt = self.dtype
        dsm = normalize_raster_to_gray(dsm_t1)
        img = Tensor(np.asarray(img_t2, dtype=dt))
        edm = normalize_raster_to_gray(depth_prior) if self.config.use_edp else None
        return ModelInputs(
            Tensor(dsm.data.astype(dt)), img, None if edm is None else Tensor(edm.data.astype(dt))
        )

    def depth_features(self, inputs: ModelInputs) -> FeaturePyramid | None:
        return self.encoder.encode_frozen(inputs.edm) if self.config.use_edp else None

    def forward(self, inputs: ModelInputs, depth_features: FeaturePyramid | None = None) -> PredictionTriple:
        """``depth_features`` may be precomputed; the depth branch carries no gradient either way."""
        f_dsm = self.encoder.encode(inputs.dsm)
        f_img = self.encoder.encode(inputs.img)
        f_edm = depth_features if depth_features is not None else self.depth_features(inputs)
        img_fused = self.fusion.fuse_pyramid(f_img, f_edm)
        change = self.change.change_pyramid(f_dsm, img_fused)
        return self.decoder(change, img_fused)

    __call__ = forward

    def predict_sample(self, sample) -> PredictionTriple:
        return self.forward(self.prepare(sample.dsm_t1, sample.img_t2, sample.depth_prior))

    def loss(self, pred: PredictionTriple, sample, loss_cfg: LossConfig) -> tuple[Tensor, dict[str, Tensor]]:
        dh = np.asarray(sample.delta_h, dtype=self.dtype)[None]
        dsm_t2 = derive_dsm_gt(np.asarray(sample.dsm_t1, dtype=self.dtype), np.asarray(sample.delta_h, dtype=self.dtype))
        mask = ChangeMask.from_labels(sample.label_2d)
        parts = {
            "wce": weighted_ce(pred.logits_2d, sample.label_2d, loss_cfg.class_weights),
            "mse3d": mse(pred.height_3d, dh),
            "grad": grad_loss(pred.height_3d, dh, mask),
            "mse_dsm": mse(pred.dsm_t2, dsm_t2[None]),
        }
        return total_loss(parts, loss_cfg), parts
