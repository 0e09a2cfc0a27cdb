"""Overall accuracy and part-segmentation IoU metrics.

Shape IoU is the mean over the parts of the shape's object class of
``|gt == p & pred == p| / |gt == p | pred == p|``; a part absent from both
labelings counts as IoU 1. Category mIoU averages shape IoUs within a
category; the reported Cat. mIoU averages categories and Ins. mIoU
averages all shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


def overall_accuracy(predictions, labels) -> float:
    pred = np.asarray(predictions).ravel()
    gt = np.asarray(labels).ravel()
    if len(pred) != len(gt) or len(gt) == 0:
        raise MetricError("predictions and labels must be non-empty and of equal length")
    return int(np.count_nonzero(pred == gt)) / len(gt)


def shape_iou(gt_parts, pred_parts, vocabulary) -> float:
    gt = np.asarray(gt_parts).ravel()
    pred = np.asarray(pred_parts).ravel()
    if len(gt) != len(pred):
        raise MetricError(f"{len(gt)} ground-truth labels vs {len(pred)} predictions")
    vocab = list(vocabulary)
    if not vocab:
        raise MetricError("empty part vocabulary")
    # exact rational mean, rounded once
    total = Fraction(0)
    for part in vocab:
        in_gt = gt == part
        in_pred = pred == part
        union = int(np.count_nonzero(in_gt | in_pred))
        if union == 0:
            total += 1
        else:
            total += Fraction(int(np.count_nonzero(in_gt & in_pred)), union)
    return float(total / len(vocab))


@dataclass
class SegEvalInput:
    object_class: int
    gt_parts: np.ndarray
    pred_parts: np.ndarray
    vocabulary: Sequence[int]


@dataclass
class MiouReport:
    shape_ious: list[float]
    category_miou: dict[int, float]
    category_counts: dict[int, int]
    cat_miou: float
    ins_miou: float
    point_accuracy: float
    extra: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        out = {
            "cat_miou": self.cat_miou,
            "ins_miou": self.ins_miou,
            "point_accuracy": self.point_accuracy,
            "num_shapes": len(self.shape_ious),
        }
        for cls, value in sorted(self.category_miou.items()):
            out[f"miou_class_{cls}"] = value
        out.update(self.extra)
        return out


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def miou_report(inputs: Sequence[SegEvalInput]) -> MiouReport:
    if not inputs:
        raise MetricError("no shapes to evaluate")
    ious = []
    by_class: dict[int, list[float]] = {}
    correct = total = 0
    for item in inputs:
        iou = shape_iou(item.gt_parts, item.pred_parts, item.vocabulary)
        ious.append(iou)
        by_class.setdefault(int(item.object_class), []).append(iou)
        gt = np.asarray(item.gt_parts).ravel()
        correct += int(np.count_nonzero(gt == np.asarray(item.pred_parts).ravel()))
        total += len(gt)
    category = {cls: _mean(v) for cls, v in sorted(by_class.items())}
    return MiouReport(
        shape_ious=ious,
        category_miou=category,
        category_counts={cls: len(v) for cls, v in sorted(by_class.items())},
        cat_miou=_mean(list(category.values())),
        ins_miou=_mean(ious),
        point_accuracy=correct / total if total else 0.0,
    )


def format_table(rows: Sequence[tuple[str, object]], title: str | None = None) -> str:
    """Aligned two-column text table."""
    width = max(len(k) for k, _ in rows)
    lines = [title] if title else []
    for key, value in rows:
        text = f"{value:.4f}" if isinstance(value, float) else str(value)
        lines.append(f"{key:<{width}}  {text}")
    return "\n".join(lines) + "\n"


def format_kv(values: dict[str, object]) -> str:
    """``key=value`` lines, sorted by key."""
    lines = []
    for key in sorted(values):
        value = values[key]
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    return "\n".join(lines) + "\n"
