"""Localization metrics: IoU, localization error, EER precision, proposal recall."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .postprocess import BoundingBox

IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class LocalizationRecord:
    predicted_class: int
    true_class: int
    box: BoundingBox | None
    gt_boxes: tuple[BoundingBox, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "gt_boxes", tuple(self.gt_boxes))
        if not self.gt_boxes:
            raise ValueError("a localization record needs at least one ground-truth box")

    def best_iou(self) -> float:
        if self.box is None:
            return 0.0
        return max(iou(self.box, gt) for gt in self.gt_boxes)

    @property
    def success(self) -> bool:
        return self.predicted_class == self.true_class and self.best_iou() >= IOU_THRESHOLD


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def localization_error(records) -> float:
    """Percentage of records with a wrong class or best IoU under 0.5."""
    records = list(records)
    if not records:
        raise ValueError("no records to score")
    failures = sum(not r.success for r in records)
    return 100.0 * failures / len(records)


def eer_threshold(values, n_positive: int) -> float:
    """Threshold whose ``>=`` count is nearest ``n_positive``; higher wins ties."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    levels = np.unique(v)
    counts = len(v) - np.searchsorted(v, levels, side="left")
    gap = np.abs(counts - n_positive)
    best = np.flatnonzero(gap == gap.min())
    return float(levels[best[-1]])


def precision_at_eer(heatmap, gt_mask) -> float:
    """Pixel precision when as many pixels are predicted as the mask holds."""
    m = np.asarray(heatmap, dtype=np.float64)
    gt = np.asarray(gt_mask).astype(bool)
    if m.shape != gt.shape:
        raise ValueError(f"heat map {m.shape} and mask {gt.shape} differ in shape")
    n_pos = int(gt.sum())
    if n_pos == 0:
        raise ValueError("ground-truth mask has no foreground")
    if not (m != 0).any():
        return 0.0
    pred = m >= eer_threshold(m, n_pos)
    return float((pred & gt).sum() / pred.sum())


def proposal_metrics(records) -> tuple[float, float]:
    """Mean per-class recall and precision of single proposals at IoU 0.5.

    Records are grouped by their ground-truth class. A ground-truth box is
    recalled when its image's proposal overlaps it enough; a proposal is
    precise when it overlaps some ground-truth box of its image.
    """
    by_class = defaultdict(list)
    for r in records:
        by_class[r.true_class].append(r)
    if not by_class:
        raise ValueError("no classes to score")
    recalls, precisions = [], []
    for cls in sorted(by_class):
        hit_gt = total_gt = hit_prop = total_prop = 0
        for r in by_class[cls]:
            total_gt += len(r.gt_boxes)
            if r.box is None:
                continue
            total_prop += 1
            matched = [iou(r.box, gt) >= IOU_THRESHOLD for gt in r.gt_boxes]
            hit_gt += sum(matched)
            hit_prop += any(matched)
        recalls.append(hit_gt / total_gt)
        precisions.append(hit_prop / total_prop if total_prop else 0.0)
    return float(np.mean(recalls)), float(np.mean(precisions))


def per_class_localization_error(records) -> dict[int, float]:
    by_class = defaultdict(list)
    for r in records:
        by_class[r.true_class].append(r)
    return {cls: localization_error(rs) for cls, rs in sorted(by_class.items())}
