"""Segmentation quality: confusion matrices and mean intersection-over-union.

The mean runs over classes present in the ground truth; absent classes
carry NaN in the per-class vector and do not drag the average down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IGNORE_INDEX = 255


@dataclass
class Metrics:
    confusion: np.ndarray       # (C, C) counts, rows = truth, cols = prediction
    per_class_iou: np.ndarray   # (C,) floats, NaN where the class is absent from truth
    miou: float


def confusion_matrix(pred, truth, num_classes, ignore_index=IGNORE_INDEX):
    """Count (truth, prediction) pairs, skipping ignored truth pixels."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"confusion_matrix: pred shape {pred.shape} != truth shape {truth.shape}")
    valid = truth != ignore_index
    p = pred[valid]
    t = truth[valid]
    for name, arr in (("pred", p), ("truth", t)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"confusion_matrix: {name} contains class ids outside [0, {num_classes})")
    counts = np.bincount(num_classes * t + p, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def metrics_from_confusion(confusion):
    """Per-class IoU and its mean over classes present in the truth."""
    confusion = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(confusion).astype(np.float64)
    fn = confusion.sum(axis=1) - tp
    fp = confusion.sum(axis=0) - tp
    present = (tp + fn) > 0
    iou = np.full(confusion.shape[0], np.nan)
    denom = tp + fp + fn
    iou[present] = tp[present] / denom[present]
    miou = float(np.mean(iou[present])) if present.any() else float("nan")
    return Metrics(confusion=confusion, per_class_iou=iou, miou=miou)


def miou(pred, truth, num_classes, ignore_index=IGNORE_INDEX):
    """Metrics for one prediction/truth pair."""
    return metrics_from_confusion(confusion_matrix(pred, truth, num_classes, ignore_index))
