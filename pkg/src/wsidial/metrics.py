"""Pixel-confusion segmentation metrics and ROC-AUC.

IOU, recall, and precision follow the usual pixel-count definitions:

    IOU       = TP / (TP + FN + FP)
    recall    = TP / (TP + FN)
    precision = TP / (TP + FP)

Undefined ratios (zero denominator) come back as NaN so callers must flag
them explicitly rather than silently reading 0. AUC is the exact
Mann-Whitney statistic: P(score+ > score-) + 0.5 * P(tie).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from wsidial.errors import MetricUndefinedError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    fp: int
    tn: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fn + other.fn,
            self.fp + other.fp,
            self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Exact pixel counts between two equally-shaped binary masks."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fn = int(np.count_nonzero(~p & g))
    fp = int(np.count_nonzero(p & ~g))
    tn = int(np.count_nonzero(~p & ~g))
    return ConfusionCounts(tp, fn, fp, tn)


def iou(c: ConfusionCounts) -> float:
    denom = c.tp + c.fn + c.fp
    return c.tp / denom if denom else math.nan


def recall(c: ConfusionCounts) -> float:
    denom = c.tp + c.fn
    return c.tp / denom if denom else math.nan


def precision(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp
    return c.tp / denom if denom else math.nan


@dataclass
class SegReport:
    """Per-slide and pooled (micro-averaged) segmentation metrics."""

    per_slide: dict[str, ConfusionCounts] = field(default_factory=dict)

    def add(self, slide_id: str, counts: ConfusionCounts) -> None:
        self.per_slide[slide_id] = counts

    @property
    def pooled(self) -> ConfusionCounts:
        total = ConfusionCounts(0, 0, 0, 0)
        for c in self.per_slide.values():
            total = total + c
        return total

    def to_dict(self) -> dict:
        def row(c: ConfusionCounts) -> dict:
            metrics = {"iou": iou(c), "recall": recall(c), "precision": precision(c)}
            return {
                "counts": {"tp": c.tp, "fn": c.fn, "fp": c.fp, "tn": c.tn},
                "metrics": {
                    k: (None if math.isnan(v) else v) for k, v in metrics.items()
                },
                "undefined": sorted(
                    k for k, v in metrics.items() if math.isnan(v)
                ),
            }

        return {
            "schema_version": 1,
            "pooled": row(self.pooled),
            "per_slide": {sid: row(c) for sid, c in sorted(self.per_slide.items())},
        }


def roc_auc(scores, labels) -> float:
    """Exact ROC-AUC via the rank (Mann-Whitney) statistic.

    Ties get half credit. Raises MetricUndefinedError unless both label
    values are present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    pos = labels == 1
    n_pos = int(np.count_nonzero(pos))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            f"AUC undefined: {n_pos} positive / {n_neg} negative labels"
        )
    ranks = _average_ranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks
