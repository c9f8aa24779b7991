"""Training objective: weighted CE, height MSE, change-region gradient loss, DSM MSE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, ops
from .errors import ConfigurationError, DataError, DimensionError, NumericError

TERMS = ("wce", "mse3d", "grad", "mse_dsm")


def default_class_weights(num_classes: int) -> tuple[float, ...]:
    """0.05 for the unchanged class, 0.95 for every changed class."""
    return (0.05,) + (0.95,) * (num_classes - 1)


@dataclass(frozen=True)
class LossConfig:
    lambda_wce: float = 1.0
    lambda_mse3d: float = 1.0
    lambda_grad: float = 0.2
    lambda_mse_dsm: float = 1.0
    class_weights: tuple[float, ...] = field(default_factory=lambda: default_class_weights(3))

    def __post_init__(self):
        lams = self.lambdas
        if any(v < 0 for v in lams) or not any(v > 0 for v in lams):
            raise ConfigurationError(f"loss weights must be nonnegative with at least one positive: {lams}")
        if any(w < 0 for w in self.class_weights):
            raise ConfigurationError("class weights must be nonnegative")

    @property
    def lambdas(self) -> tuple[float, float, float, float]:
        return (self.lambda_wce, self.lambda_mse3d, self.lambda_grad, self.lambda_mse_dsm)

    @classmethod
    def from_lambdas(cls, lambdas, num_classes: int = 3) -> "LossConfig":
        a, b, c, d = (float(v) for v in lambdas)
        return cls(a, b, c, d, default_class_weights(num_classes))


@dataclass(frozen=True)
class ChangeMask:
    """Change-region pixels (label != unchanged)."""

    mask: np.ndarray

    @classmethod
    def from_labels(cls, labels) -> "ChangeMask":
        return cls(np.asarray(labels).reshape(np.shape(labels)[-2:]) != 0)

    @property
    def n(self) -> int:
        return int(self.mask.size)

    @property
    def n_c(self) -> int:
        return int(self.mask.sum())


def _as_2d_labels(labels, h: int, w: int) -> np.ndarray:
    lab = np.asarray(labels)
    if lab.ndim == 3 and lab.shape[0] == 1:
        lab = lab[0]
    if lab.shape != (h, w):
        raise DimensionError(f"labels {lab.shape} do not match logits extent {(h, w)}")
    return lab.astype(np.int64)


def weighted_ce(logits: Tensor, labels, class_weights) -> Tensor:
    """Pixel-mean of -w[label] * log softmax(logits)[label]; the denominator is the pixel count."""
    c, h, w = logits.shape
    if c < 2:
        raise ConfigurationError("weighted CE needs at least 2 classes")
    lab = _as_2d_labels(labels, h, w)
    if lab.min() < 0 or lab.max() >= c:
        raise DataError(f"labels must lie in [0, {c - 1}], got range [{lab.min()}, {lab.max()}]")
    weights = np.asarray(class_weights, dtype=logits.dtype)
    if weights.shape != (c,):
        raise ConfigurationError(f"expected {c} class weights, got {weights.shape}")
    n = h * w
    flat = lab.reshape(-1)
    target = np.zeros((n, c), dtype=logits.dtype)
    target[np.arange(n), flat] = weights[flat]
    logp = ops.log_softmax(logits.reshape(c, n).transpose(1, 0))
    return ops.sum(logp * target) * (-1.0 / n)


def mse(pred: Tensor, gt) -> Tensor:
    gt_arr = gt.data if isinstance(gt, Tensor) else np.asarray(gt, dtype=pred.dtype)
    if gt_arr.shape != pred.shape:
        if np.squeeze(gt_arr).shape != np.squeeze(pred.data).shape:
            raise DimensionError(f"mse: prediction {pred.shape} and target {gt_arr.shape} differ in shape")
        gt_arr = gt_arr.reshape(pred.shape)
    return ops.mean(ops.square(pred - gt_arr))


def grad_loss(pred: Tensor, gt, mask: ChangeMask) -> Tensor:
    """Forward-difference mismatch summed over change pixels, divided by their count."""
    gt_arr = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=pred.dtype)
    if gt_arr.shape != pred.shape:
        raise DimensionError(f"grad_loss: prediction {pred.shape} and target {gt_arr.shape} differ")
    m = mask.mask
    if m.shape != pred.shape[-2:]:
        raise DimensionError(f"grad_loss: mask {m.shape} does not match {pred.shape[-2:]}")
    if mask.n_c == 0:
        return Tensor(np.zeros((), dtype=pred.dtype))
    total = None
    if pred.shape[-1] > 1:
        dp = pred[..., :, 1:] - pred[..., :, :-1]
        dg = gt_arr[..., :, 1:] - gt_arr[..., :, :-1]
        total = ops.sum(ops.abs(dp - dg) * m[:, :-1].astype(pred.dtype))
    if pred.shape[-2] > 1:
        dp = pred[..., 1:, :] - pred[..., :-1, :]
        dg = gt_arr[..., 1:, :] - gt_arr[..., :-1, :]
        term = ops.sum(ops.abs(dp - dg) * m[:-1, :].astype(pred.dtype))
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros((), dtype=pred.dtype))
    return total * (1.0 / mask.n_c)


def total_loss(parts: dict[str, Tensor], config: LossConfig) -> Tensor:
    """Weighted sum over the four terms; raises if any term is not finite."""
    for name in TERMS:
        if name not in parts:
            raise ConfigurationError(f"missing loss term {name!r}")
        if not math.isfinite(parts[name].item()):
            raise NumericError(f"loss term {name!r} is not finite")
    total = None
    for name, lam in zip(TERMS, config.lambdas):
        if lam == 0:
            continue
        term = parts[name] * lam
        total = term if total is None else total + term
    return total


def derive_dsm_gt(dsm_t1, delta_h) -> np.ndarray:
    """T2 surface = T1 surface + height change."""
    a, b = np.asarray(dsm_t1), np.asarray(delta_h)
    if a.shape != b.shape:
        raise DimensionError(f"DSM {a.shape} and height change {b.shape} differ in shape")
    return a + b
