"""Confusion-count metrics, boundary F1 and a forward-pass throughput bench."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionAccumulator:
    num_classes: int
    tp: np.ndarray = field(default=None)
    fp: np.ndarray = field(default=None)
    fn: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.num_classes, dtype=np.int64))

    def update(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionAccumulator":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise MetricsError(f"prediction {pred.shape} vs ground truth {gt.shape}")
        c = self.num_classes
        for arr, what in ((pred, "prediction"), (gt, "ground truth")):
            if arr.size and (arr.min() < 0 or arr.max() >= c):
                raise MetricsError(f"{what} labels outside [0, {c})")
        conf = np.bincount((gt.reshape(-1) * c + pred.reshape(-1)).astype(np.int64), minlength=c * c).reshape(c, c)
        diag = np.diag(conf)
        self.tp += diag
        self.fp += conf.sum(axis=0) - diag
        self.fn += conf.sum(axis=1) - diag
        return self

    def merge(self, other: "ConfusionAccumulator") -> "ConfusionAccumulator":
        return ConfusionAccumulator(self.num_classes, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def accumulate(pred: np.ndarray, gt: np.ndarray, acc: ConfusionAccumulator) -> ConfusionAccumulator:
    return acc.update(pred, gt)


def _masked_mean(num: np.ndarray, den: np.ndarray) -> tuple[float, np.ndarray]:
    valid = den > 0
    per = np.full(num.shape, np.nan)
    per[valid] = num[valid] / den[valid]
    return (float(per[valid].mean()) if valid.any() else float("nan")), per


def report(acc: ConfusionAccumulator) -> dict[str, Any]:
    """Macro mIoU, mDICE and mRecall over classes with non-zero denominators."""
    tp, fp, fn = (a.astype(np.float64) for a in (acc.tp, acc.fp, acc.fn))
    if not (tp + fp + fn).any():
        raise MetricsError("empty accumulator")
    miou, iou = _masked_mean(tp, tp + fp + fn)
    mdice, dice = _masked_mean(2 * tp, 2 * tp + fp + fn)
    mrecall, recall = _masked_mean(tp, tp + fn)
    per_class = {
        str(c): {"iou": _nan_to_none(iou[c]), "dice": _nan_to_none(dice[c]), "recall": _nan_to_none(recall[c])}
        for c in range(acc.num_classes)
    }
    return {"miou": miou, "mdice": mdice, "mrecall": mrecall, "per_class": per_class}


def _nan_to_none(x: float) -> float | None:
    return None if np.isnan(x) else float(x)


# ---------------------------------------------------------------- boundaries


def label_boundary(labels: np.ndarray) -> np.ndarray:
    """Pixels with at least one 4-neighbour of a different class."""
    lab = np.asarray(labels)
    b = np.zeros(lab.shape, dtype=bool)
    dv = lab[1:, :] != lab[:-1, :]
    dh = lab[:, 1:] != lab[:, :-1]
    b[1:, :] |= dv
    b[:-1, :] |= dv
    b[:, 1:] |= dh
    b[:, :-1] |= dh
    return b


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask.copy()
    h, w = mask.shape
    padded = np.pad(mask, radius)
    out = np.zeros_like(mask)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


def boundary_scores(pred: np.ndarray, gt: np.ndarray, tolerance: int = 1) -> tuple[float, float, float]:
    """(precision, recall, F1) of predicted vs true class boundaries."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricsError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    bp, bg = label_boundary(pred), label_boundary(gt)
    if not bp.any() and not bg.any():
        return 1.0, 1.0, 1.0
    if not bp.any() or not bg.any():
        return 0.0, 0.0, 0.0
    precision = float((bp & _dilate(bg, tolerance)).sum() / bp.sum())
    recall = float((bg & _dilate(bp, tolerance)).sum() / bg.sum())
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def boundary_f1(pred: np.ndarray, gt: np.ndarray, tolerance: int = 1) -> float:
    return boundary_scores(pred, gt, tolerance)[2]


# ---------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    miou: float
    mdice: float
    mrecall: float
    boundary_f1: float
    fps: float | None
    per_class: dict[str, Any]
    bench: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        out = {
            "miou": self.miou,
            "mdice": self.mdice,
            "mrecall": self.mrecall,
            "boundary_f1": self.boundary_f1,
            "fps": self.fps,
            "per_class": self.per_class,
        }
        if self.bench is not None:
            out["bench"] = self.bench
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def evaluate_predictions(preds, gts, num_classes: int, tolerance: int = 1) -> MetricsReport:
    """Pool confusion counts over all images; boundary F1 is the per-image mean."""
    acc = ConfusionAccumulator(num_classes)
    f1s = []
    for p, g in zip(preds, gts):
        acc.update(p, g)
        f1s.append(boundary_f1(p, g, tolerance))
    rep = report(acc)
    return MetricsReport(rep["miou"], rep["mdice"], rep["mrecall"], float(np.mean(f1s)), None, rep["per_class"])


def majority_baseline(gts, num_classes: int) -> MetricsReport:
    counts = np.zeros(num_classes, dtype=np.int64)
    for g in gts:
        counts += np.bincount(np.asarray(g).reshape(-1), minlength=num_classes)[:num_classes]
    majority = int(np.argmax(counts))
    return evaluate_predictions([np.full(np.shape(g), majority) for g in gts], gts, num_classes)


def fps_bench(
    forward: Callable[[], Any],
    warmup: int = 5,
    timed: int = 50,
    element_type: str = "float64",
    input_size: tuple[int, int] | None = None,
) -> dict[str, Any]:
    """Images per second over ``timed`` single-image forward calls after ``warmup`` untimed ones."""
    for _ in range(warmup):
        forward()
    start = time.perf_counter()
    for _ in range(timed):
        forward()
    elapsed = time.perf_counter() - start
    return {
        "fps": timed / elapsed if elapsed > 0 else float("inf"),
        "element_type": element_type,
        "input_size": list(input_size) if input_size else None,
        "batch_size": 1,
        "warmup": warmup,
        "timed": timed,
        "seconds": elapsed,
    }
