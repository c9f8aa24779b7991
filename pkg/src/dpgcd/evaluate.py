"""Run a trained model over a split and aggregate metrics with pixel weighting."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .checkpoint import load_checkpoint
from .config import model_config_from_dict
from .errors import CheckpointError, DataError
from .metrics import HeightAccumulator, MetricReport, build_report, confusion_matrix
from .model import DPGCD, ModelConfig
from .report import height_histogram


def load_model(ckpt_path, model_cfg: ModelConfig | None = None) -> DPGCD:
    """Rebuild the model described by the checkpoint metadata (or ``model_cfg``) and load weights."""
    state, meta = load_checkpoint(ckpt_path)
    if model_cfg is None:
        if not meta:
            raise CheckpointError(f"{ckpt_path}: no model metadata; pass a model config")
        model_cfg = model_config_from_dict(meta)
    model = DPGCD(model_cfg)
    model.store.load_state_dict(state)
    return model.eval()


class Evaluator:
    """Accumulates confusion counts, height errors and change-pixel scatter tile by tile."""

    def __init__(self, num_classes: int, mf1_over: str = "all"):
        self.num_classes = num_classes
        self.mf1_over = mf1_over
        self.cm = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.height = HeightAccumulator()
        self.scatter: list[np.ndarray] = []

    def add(self, pred_labels, pred_dh, gt_labels, gt_dh) -> None:
        gt_labels = np.asarray(gt_labels)
        pred_dh = np.asarray(pred_dh, dtype=np.float64).reshape(gt_labels.shape)
        gt_dh = np.asarray(gt_dh, dtype=np.float64).reshape(gt_labels.shape)
        self.cm += confusion_matrix(pred_labels, gt_labels, self.num_classes)
        mask = gt_labels != 0
        self.height.update(pred_dh, gt_dh, mask)
        self.scatter.append(np.stack([gt_dh[mask], pred_dh[mask]], axis=1))

    def report(self) -> MetricReport:
        scatter = np.concatenate(self.scatter) if self.scatter else np.zeros((0, 2))
        return build_report(
            self.cm,
            self.height,
            self.mf1_over,
            scatter=scatter,
            hist_gt=height_histogram(scatter[:, 0]),
            hist_pred=height_histogram(scatter[:, 1]),
        )


def evaluate_model(model: DPGCD, samples, mf1_over: str = "all") -> MetricReport:
    samples = list(samples)
    if not samples:
        raise DataError("evaluation split is empty")
    model.eval()
    ev = Evaluator(model.config.decoder.num_2d_classes, mf1_over)
    with no_grad():
        for s in samples:
            pred = model.predict_sample(s)
            labels = np.argmax(pred.logits_2d.data, axis=0)
            ev.add(labels, pred.height_3d.data[0], s.label_2d, s.delta_h)
    return ev.report()


def evaluate_predictions(pairs, num_classes: int, mf1_over: str = "all") -> MetricReport:
    """Score precomputed ``(pred_labels, pred_dh, gt_labels, gt_dh)`` tuples."""
    ev = Evaluator(num_classes, mf1_over)
    for p in pairs:
        ev.add(*p)
    return ev.report()


def zero_predictor_report(samples, num_classes: int) -> MetricReport:
    """Baseline that predicts no change anywhere."""
    return evaluate_predictions(
        ((np.zeros_like(s.label_2d), np.zeros_like(s.delta_h), s.label_2d, s.delta_h) for s in samples), num_classes
    )


def zero_predictor_crmse(samples) -> float | None:
    """Closed form for the no-change baseline: RMS of the true change over change pixels."""
    sq, n = 0.0, 0
    for s in samples:
        m = np.asarray(s.label_2d) != 0
        d = np.asarray(s.delta_h, dtype=np.float64)[m]
        sq += float((d * d).sum())
        n += int(m.sum())
    return math.sqrt(sq / n) if n else None


__all__ = [
    "Evaluator",
    "evaluate_model",
    "evaluate_predictions",
    "load_model",
    "zero_predictor_crmse",
    "zero_predictor_report",
]
