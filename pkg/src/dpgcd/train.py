"""Toy training loop: per-sample SGD with momentum over the train split."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import backward
from .checkpoint import save_checkpoint
from .errors import DataError, NumericError
from .losses import TERMS, LossConfig
from .model import DPGCD, ModelConfig
from .prng import Prng

log = logging.getLogger(__name__)

CURVE_HEADER = ("step",) + TERMS + ("total",)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    momentum: float = 0.9
    seed: int = 42
    log_every: int = 100


@dataclass
class TrainResult:
    model: DPGCD
    curve: list[tuple[int, float, float, float, float, float]]
    aborted: bool = False
    abort_reason: str = ""


class SGDMomentum:
    """v <- mu v + g ; p <- p - lr v"""

    def __init__(self, params, lr: float, momentum: float):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for p in self.params:
            v = self.velocity[p.name]
            v *= self.momentum
            v += grads[p.name]
            p.data -= self.lr * v


def format_float(x: float) -> str:
    """Locale-independent, round-trippable decimal text."""
    return repr(float(x))


def write_curve(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(CURVE_HEADER)]
    for row in rows:
        lines.append(",".join([str(row[0])] + [format_float(v) for v in row[1:]]))
    path.write_text("\n".join(lines) + "\n")


def read_curve(path) -> list[tuple]:
    lines = Path(path).read_text().splitlines()
    return [(int(r[0]),) + tuple(float(v) for v in r[1:]) for r in (ln.split(",") for ln in lines[1:])]


def checkpoint_meta(model_cfg: ModelConfig, loss_cfg: LossConfig, train_cfg: TrainConfig, step: int) -> dict[str, str]:
    from .config import model_config_to_dict

    meta = model_config_to_dict(model_cfg)
    meta["lambda"] = ",".join(format_float(v) for v in loss_cfg.lambdas)
    meta["train_seed"] = str(train_cfg.seed)
    meta["step"] = str(step)
    return meta


def train_toy(
    samples,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    ckpt_path=None,
    curve_path=None,
) -> TrainResult:
    """Train on ``samples`` (the train split) for ``train_cfg.steps`` single-sample steps.

    Sample order is a fresh splitmix64 permutation every epoch. If a loss
    term turns non-finite, training stops and the checkpoint keeps the
    parameters from the last finite step.
    """
    samples = list(samples)
    if not samples:
        raise DataError("train split is empty")
    model = DPGCD(model_cfg).train()
    params = model.store.trainable()
    opt = SGDMomentum(params, train_cfg.lr, train_cfg.momentum)
    order_rng = Prng(train_cfg.seed)
    order: list[int] = []
    curve = []
    aborted, reason = False, ""
    for step in range(train_cfg.steps):
        if not order:
            order = order_rng.permutation(len(samples))
        sample = samples[order.pop(0)]
        norm_stats = model.store.snapshot_norm_stats()
        try:
            pred = model.predict_sample(sample)
            loss, parts = model.loss(pred, sample, loss_cfg)
            if not math.isfinite(loss.item()):
                raise NumericError("total loss is not finite")
            grads = backward(loss, params)
            if not all(np.isfinite(g).all() for g in grads.values()):
                raise NumericError("non-finite gradient")
        except NumericError as exc:
            aborted, reason = True, f"step {step}: {exc}"
            # weights are only updated after the checks; running statistics were already touched
            model.store.restore_norm_stats(norm_stats)
            log.error("aborting training at %s", reason)
            break
        curve.append((step,) + tuple(parts[t].item() for t in TERMS) + (loss.item(),))
        opt.step(grads)
        if train_cfg.log_every and step % train_cfg.log_every == 0:
            log.info("step %d total %.4f", step, loss.item())
    if curve_path is not None:
        write_curve(curve_path, curve)
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, model.store.state_dict(), checkpoint_meta(model_cfg, loss_cfg, train_cfg, len(curve)))
    return TrainResult(model, curve, aborted, reason)


def moving_average(values, window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        raise DataError(f"need at least {window} values for a moving average")
    return np.convolve(v, np.ones(window) / window, mode="valid")
