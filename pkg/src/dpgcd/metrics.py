"""2D change-segmentation and 3D height-change evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError

REL_EPS = 1e-6


def class_names(num_classes: int) -> list[str]:
    if num_classes == 2:
        return ["un", "ch"]
    if num_classes == 3:
        return ["un", "n", "d"]
    return ["un"] + [f"c{i}" for i in range(1, num_classes)]


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    """counts[g, p] of pixels with ground truth g predicted as p."""
    p = np.asarray(pred).reshape(-1).astype(np.int64)
    g = np.asarray(gt).reshape(-1).astype(np.int64)
    if p.shape != g.shape:
        raise DimensionError(f"prediction and ground truth differ in size: {p.size} vs {g.size}")
    for arr, what in ((p, "prediction"), (g, "ground truth")):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{what} labels outside [0, {num_classes - 1}]")
    return np.bincount(g * num_classes + p, minlength=num_classes**2).reshape(num_classes, num_classes)


@dataclass(frozen=True)
class ClassScore:
    iou: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    absent: bool = False


def scores_from_confusion(cm: np.ndarray) -> list[ClassScore]:
    total = int(cm.sum())
    out = []
    for c in range(cm.shape[0]):
        tp = int(cm[c, c])
        fn = int(cm[c, :].sum()) - tp
        fp = int(cm[:, c].sum()) - tp
        tn = total - tp - fp - fn
        if tp + fp + fn == 0:
            # class in neither map: scored perfect, flagged for the report
            out.append(ClassScore(1.0, 1.0, tp, fp, fn, tn, absent=True))
        else:
            out.append(ClassScore(tp / (tp + fp + fn), 2 * tp / (2 * tp + fp + fn), tp, fp, fn, tn))
    return out


def class_iou_f1(pred_labels, gt_labels, num_classes: int) -> list[ClassScore]:
    return scores_from_confusion(confusion_matrix(pred_labels, gt_labels, num_classes))


def aggregate_2d(per_class: list[ClassScore], mf1_over: str = "all") -> tuple[float, float]:
    """(mean IoU over changed classes, mean F1 over all classes or changed ones)."""
    if len(per_class) < 2:
        raise DimensionError("aggregation needs at least 2 classes")
    changed = per_class[1:]
    miou_ch = sum(s.iou for s in changed) / len(changed)
    pool = per_class if mf1_over == "all" else changed
    return miou_ch, sum(s.f1 for s in pool) / len(pool)


@dataclass
class HeightMetrics:
    mae: float
    rmse: float
    crmse: float | None
    crel: float | None
    crel_skipped: int
    n: int
    n_c: int

    def as_tuple(self):
        return self.mae, self.rmse, self.crmse, self.crel


@dataclass
class HeightAccumulator:
    """Running sums so metrics over many tiles weight every pixel equally."""

    abs_sum: float = 0.0
    sq_sum: float = 0.0
    n: int = 0
    c_sq_sum: float = 0.0
    n_c: int = 0
    rel_sum: float = 0.0
    n_rel: int = 0
    rel_skipped: int = 0

    def update(self, pred, gt, mask) -> None:
        p = np.asarray(pred, dtype=np.float64).reshape(-1)
        g = np.asarray(gt, dtype=np.float64).reshape(-1)
        m = np.asarray(mask, dtype=bool).reshape(-1)
        if not (p.shape == g.shape == m.shape):
            raise DimensionError(f"height metric inputs differ in size: {p.size}, {g.size}, {m.size}")
        err = p - g
        self.abs_sum += float(np.abs(err).sum())
        self.sq_sum += float((err * err).sum())
        self.n += p.size
        ec, gc = err[m], g[m]
        self.c_sq_sum += float((ec * ec).sum())
        self.n_c += int(m.sum())
        ok = np.abs(gc) >= REL_EPS
        self.rel_sum += float((np.abs(ec[ok]) / np.abs(gc[ok])).sum())
        self.n_rel += int(ok.sum())
        self.rel_skipped += int((~ok).sum())

    def result(self) -> HeightMetrics:
        if self.n == 0:
            raise DataError("no pixels accumulated")
        crmse = math.sqrt(self.c_sq_sum / self.n_c) if self.n_c else None
        crel = self.rel_sum / self.n_rel if self.n_rel else None
        return HeightMetrics(
            mae=self.abs_sum / self.n,
            rmse=math.sqrt(self.sq_sum / self.n),
            crmse=crmse,
            crel=crel,
            crel_skipped=self.rel_skipped,
            n=self.n,
            n_c=self.n_c,
        )


def height_metrics(pred, gt, mask) -> HeightMetrics:
    """MAE and RMSE over every pixel; cRMSE and cRel over change pixels.

    cRel leaves out change pixels whose true change is below 1e-6 m in
    magnitude and counts them in ``crel_skipped``. With no change pixels,
    cRMSE and cRel are None.
    """
    m = getattr(mask, "mask", mask)
    acc = HeightAccumulator()
    acc.update(pred, gt, m)
    return acc.result()


@dataclass
class MetricReport:
    num_classes: int
    per_class: list[ClassScore]
    miou_ch: float
    mf1: float
    height: HeightMetrics
    confusion: np.ndarray
    scatter: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    hist_gt: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hist_pred: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def summary(self) -> dict[str, float | int | None]:
        """Flat key/value view with table-style column names."""
        out: dict[str, float | int | None] = {}
        for name, s in zip(class_names(self.num_classes), self.per_class):
            out[f"IoU_{name}"] = s.iou
        for name, s in zip(class_names(self.num_classes), self.per_class):
            out[f"F1_{name}"] = s.f1
        out["miou_ch"] = self.miou_ch
        out["mF1"] = self.mf1
        h = self.height
        out.update(MAE=h.mae, RMSE=h.rmse, cRMSE=h.crmse, cRel=h.crel)
        out["cRel_skipped"] = h.crel_skipped
        out["N"] = h.n
        out["N_c"] = h.n_c
        absent = [n for n, s in zip(class_names(self.num_classes), self.per_class) if s.absent]
        out["absent_classes"] = ",".join(absent)
        return out


def build_report(cm: np.ndarray, height: HeightAccumulator, mf1_over: str = "all", **payload) -> MetricReport:
    scores = scores_from_confusion(cm)
    miou_ch, mf1 = aggregate_2d(scores, mf1_over)
    return MetricReport(cm.shape[0], scores, miou_ch, mf1, height.result(), cm, **payload)
