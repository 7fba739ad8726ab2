"""Classification and instance-segmentation metrics.

Classification metrics are computed from a confusion matrix whose rows are
true classes and columns are predicted classes. All zero-division cases
(precision/recall/F1 with no positives) resolve to 0.0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (k, k) int64; rows = true class, cols = predicted class
    classes: tuple[str, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassReport:
    classes: tuple[str, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    support: tuple[int, ...]
    accuracy: float
    weighted_f1: float


def confusion(
    true_labels: Sequence[str],
    predicted_labels: Sequence[str],
    classes: Sequence[str],
) -> ConfusionMatrix:
    """Count (true, predicted) label pairs into a k x k matrix."""
    if len(true_labels) != len(predicted_labels):
        raise ValueError(
            f"label sequences differ in length: {len(true_labels)} vs {len(predicted_labels)}"
        )
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in index:
            raise ValueError(f"unknown true label {t!r}")
        if p not in index:
            raise ValueError(f"unknown predicted label {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts=counts, classes=tuple(classes))


def accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of correct predictions: trace over total."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def per_class_prf(
    cm: ConfusionMatrix,
) -> tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]]:
    """Per-class (precision, recall, F1) from the confusion matrix."""
    tp = np.diag(cm.counts).astype(float)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    precision = tuple(float(_safe_div(t, t + f)) for t, f in zip(tp, fp))
    recall = tuple(float(_safe_div(t, t + f)) for t, f in zip(tp, fn))
    f1 = tuple(
        float(_safe_div(2 * p * r, p + r)) for p, r in zip(precision, recall)
    )
    return precision, recall, f1


def class_report(cm: ConfusionMatrix) -> ClassReport:
    precision, recall, f1 = per_class_prf(cm)
    support = tuple(int(s) for s in cm.counts.sum(axis=1))
    report = ClassReport(
        classes=cm.classes,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=accuracy(cm),
        weighted_f1=0.0,
    )
    return ClassReport(
        classes=report.classes,
        precision=report.precision,
        recall=report.recall,
        f1=report.f1,
        support=report.support,
        accuracy=report.accuracy,
        weighted_f1=weighted_f1(report),
    )


def weighted_f1(report: ClassReport) -> float:
    """Support-weighted mean of the per-class F1 scores."""
    total = sum(report.support)
    if total <= 0:
        raise ValueError("supports sum to zero")
    return sum(s * f for s, f in zip(report.support, report.f1)) / total


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Pixel intersection-over-union of two binary masks; 0.0 when both empty."""
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(a, b).sum())
    return inter / union


def box_iou(
    a: Sequence[int] | Sequence[float], b: Sequence[int] | Sequence[float]
) -> float:
    """Rectangle IoU under the [x1, y1, x2, y2) convention; 0.0 when disjoint."""
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    if ax1 >= ax2 or ay1 >= ay2:
        raise ValueError(f"invalid box {tuple(a)}")
    if bx1 >= bx2 or by1 >= by2:
        raise ValueError(f"invalid box {tuple(b)}")
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


@dataclass(frozen=True)
class MatchResult:
    """Greedy label-gated matching of predictions to ground-truth instances."""

    pairs: tuple[tuple[int, int, float], ...]  # (pred index, gt index, IoU)
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]


def match_instances(
    preds: Sequence,
    gts: Sequence,
    iou_threshold: float = 0.5,
    mode: str = "mask",
) -> MatchResult:
    """Match predictions to ground truth greedily by descending IoU.

    Only equal-label pairs are considered. Candidate pairs are processed in
    descending IoU order (ties broken by lower prediction index, then lower
    ground-truth index); a pair is accepted when both members are still
    unmatched and its IoU meets the threshold. ``mode`` selects whether IoU is
    computed over instance masks or boxes; items must expose ``label`` plus a
    ``mask`` or ``box`` attribute accordingly.
    """
    if mode not in ("mask", "box"):
        raise ValueError(f"mode must be 'mask' or 'box', got {mode!r}")

    def iou(p, g) -> float:
        if mode == "mask":
            return mask_iou(p.mask, g.mask)
        return box_iou(p.box, g.box)

    candidates = []
    for pi, p in enumerate(preds):
        for gi, g in enumerate(gts):
            if p.label != g.label:
                continue
            v = iou(p, g)
            if v >= iou_threshold:
                candidates.append((v, pi, gi))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    matched_p: set[int] = set()
    matched_g: set[int] = set()
    pairs: list[tuple[int, int, float]] = []
    for v, pi, gi in candidates:
        if pi in matched_p or gi in matched_g:
            continue
        matched_p.add(pi)
        matched_g.add(gi)
        pairs.append((pi, gi, v))
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_preds=tuple(i for i in range(len(preds)) if i not in matched_p),
        unmatched_gts=tuple(i for i in range(len(gts)) if i not in matched_g),
    )


def detection_prf(match: MatchResult) -> tuple[float, float, float]:
    """Object-level (precision, recall, F1) from a match result; 0/0 -> 0."""
    tp = len(match.pairs)
    precision = _safe_div(tp, tp + len(match.unmatched_preds))
    recall = _safe_div(tp, tp + len(match.unmatched_gts))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return precision, recall, f1


def mean_iou(match: MatchResult) -> float:
    """Mean IoU over all ground-truth instances, unmatched counting as 0."""
    n_gts = len(match.pairs) + len(match.unmatched_gts)
    if n_gts == 0:
        return 0.0
    return sum(v for _, _, v in match.pairs) / n_gts
