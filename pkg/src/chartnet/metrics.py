"""Losses, box overlap and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateBox, KindMismatch
from .qa import CHART_SPECIFIC, GENERIC


def _coords(box):
    if hasattr(box, "as_tuple"):
        return box.as_tuple()
    x0, y0, x1, y1 = (float(v) for v in box)
    return x0, y0, x1, y1


def iou(a, b) -> float:
    """Intersection over union of two (x_min, y_min, x_max, y_max) boxes."""
    ax0, ay0, ax1, ay1 = _coords(a)
    bx0, by0, bx1, by1 = _coords(b)
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if not (ax1 > ax0 and ay1 > ay0) or not (bx1 > bx0 and by1 > by0):
        raise DegenerateBox(f"box has no area: {(ax0, ay0, ax1, ay1)} / {(bx0, by0, bx1, by1)}")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def repair_box(box) -> tuple[tuple[float, float, float, float], bool]:
    """Sort inverted coordinates; returns the box and whether it was repaired."""
    x0, y0, x1, y1 = _coords(box)
    fixed = (min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
    return fixed, fixed != (x0, y0, x1, y1)


def compute_loss(prediction, target, kind: str) -> float:
    """Cross-entropy (generic) or mean squared error over 4 coordinates."""
    if prediction.kind != kind:
        raise KindMismatch(f"prediction is {prediction.kind}, target is {kind}")
    if kind == GENERIC:
        p = float(np.asarray(prediction.class_distribution)[int(target)])
        return -math.log(p) if p > 0 else math.inf
    if kind == CHART_SPECIFIC:
        diff = np.asarray(prediction.box, dtype=np.float64) - np.asarray(_coords(target), dtype=np.float64)
        return float(np.mean(diff ** 2))
    raise KindMismatch(f"unknown kind {kind!r}")


@dataclass
class Metrics:
    generic_accuracy: float = 0.0
    mean_iou: Optional[float] = None
    acc_at_iou: Optional[float] = None
    threshold: float = 0.8
    n_generic: int = 0
    n_chart_specific: int = 0
    repaired_boxes: int = 0
    per_template: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy_at_iou(ious, threshold: float = 0.8) -> float:
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        return 0.0
    return float(np.mean(ious >= threshold))


def summarize(correct, template_ids, ious=None, threshold: float = 0.8, repaired: int = 0,
              iou_templates=None) -> Metrics:
    """Aggregate per-example outcomes into a Metrics record."""
    correct = np.asarray(correct, dtype=bool)
    per_template: dict[str, dict] = {}
    for tid, ok in zip(template_ids, correct):
        row = per_template.setdefault(tid, {"n": 0, "correct": 0})
        row["n"] += 1
        row["correct"] += int(ok)
    m = Metrics(
        generic_accuracy=float(correct.mean()) if correct.size else 0.0,
        threshold=threshold,
        n_generic=int(correct.size),
        repaired_boxes=repaired,
    )
    if ious is not None:
        ious = np.asarray(ious, dtype=np.float64)
        m.n_chart_specific = int(ious.size)
        if ious.size:
            m.mean_iou = float(ious.mean())
            m.acc_at_iou = accuracy_at_iou(ious, threshold)
        for tid, v in zip(iou_templates or [], ious):
            row = per_template.setdefault(tid, {"n": 0, "correct": 0, "iou_sum": 0.0})
            row["n"] += 1
            row["correct"] += int(v >= threshold)
            row["iou_sum"] = row.get("iou_sum", 0.0) + float(v)
    for row in per_template.values():
        row["accuracy"] = row["correct"] / row["n"]
        if "iou_sum" in row:
            row["mean_iou"] = row.pop("iou_sum") / row["n"]
    m.per_template = dict(sorted(per_template.items()))
    return m
