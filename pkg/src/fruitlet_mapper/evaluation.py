"""Scoring a predicted fruitlet map against ground truth.

Metrics with an empty denominator (0/0) are reported as None, flagged, and
excluded from averages rather than silently treated as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fruit_map import FruitletMap
from .sphere_fit import Sphere


@dataclass
class CountReport:
    ground_truth: int
    predicted: int
    tp: int
    fp: int
    fn: int
    precision: float | None
    recall: float | None
    f1: float | None

    @classmethod
    def from_matching(cls, tp: int, fp: int, fn: int) -> "CountReport":
        precision, recall, f1 = compute_metrics(tp, fp, fn)
        return cls(ground_truth=tp + fn, predicted=tp + fp,
                   tp=tp, fp=fp, fn=fn,
                   precision=precision, recall=recall, f1=f1)


@dataclass
class ErrorSummary:
    percentage_error: float
    absolute_percentage_error: float


@dataclass
class AggregateSummary:
    """Unweighted per-scan means (the headline numbers) plus pooled metrics.

    Pooled values recompute precision/recall/F1 from summed TP/FP/FN, which
    weights scans by size; the two aggregations genuinely differ. Scans
    whose metric is undefined are excluded from the matching mean and
    counted in the excluded_* fields.
    """

    scans: int
    mean_precision: float | None
    mean_recall: float | None
    mean_f1: float | None
    pooled_precision: float | None
    pooled_recall: float | None
    pooled_f1: float | None
    mean_percentage_error: float
    mean_absolute_percentage_error: float
    excluded_precision: int = 0
    excluded_recall: int = 0
    excluded_f1: int = 0


def match_ground_truth(fmap: FruitletMap, truth: list[Sphere],
                       center_tolerance: float = 15.0) -> tuple[int, int, int]:
    """Greedy one-to-one matching of track centers to truth centers.

    Candidate pairs within the tolerance are taken in ascending center
    distance; each prediction and each truth matches at most once. Returns
    (tp, fp, fn).
    """
    if center_tolerance <= 0:
        raise ValueError("center_tolerance must be positive")
    if not fmap.tracks or not truth:
        return 0, len(fmap.tracks), len(truth)
    pred = np.array([t.sphere.center for t in fmap.tracks])
    gt = np.array([s.center for s in truth])
    dist = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=2)
    pairs = [(dist[i, j], i, j)
             for i in range(len(pred)) for j in range(len(gt))
             if dist[i, j] <= center_tolerance]
    pairs.sort()
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    tp = 0
    for _, i, j in pairs:
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        tp += 1
    return tp, len(pred) - tp, len(gt) - tp


def compute_metrics(tp: int, fp: int, fn: int):
    """(precision, recall, f1); each is None where its ratio is 0/0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    if precision is None or recall is None or precision + recall == 0.0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def percentage_error(ground_truth: int, predicted: int) -> float:
    """Signed counting error: positive for over-counting, negative for under."""
    if ground_truth <= 0:
        raise ValueError("ground_truth must be positive")
    return 100.0 * (predicted - ground_truth) / ground_truth


def error_summary(ground_truth: int, predicted: int) -> ErrorSummary:
    err = percentage_error(ground_truth, predicted)
    return ErrorSummary(percentage_error=err, absolute_percentage_error=abs(err))


def aggregate(reports: list[CountReport]) -> AggregateSummary:
    """Combine per-scan reports: unweighted means plus pooled counterparts."""
    if not reports:
        raise ValueError("no reports to aggregate")
    precisions = [r.precision for r in reports if r.precision is not None]
    recalls = [r.recall for r in reports if r.recall is not None]
    f1s = [r.f1 for r in reports if r.f1 is not None]
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    pooled_p, pooled_r, pooled_f1 = compute_metrics(tp, fp, fn)
    errors = [percentage_error(r.ground_truth, r.predicted)
              for r in reports if r.ground_truth > 0]
    return AggregateSummary(
        scans=len(reports),
        mean_precision=float(np.mean(precisions)) if precisions else None,
        mean_recall=float(np.mean(recalls)) if recalls else None,
        mean_f1=float(np.mean(f1s)) if f1s else None,
        pooled_precision=pooled_p,
        pooled_recall=pooled_r,
        pooled_f1=pooled_f1,
        mean_percentage_error=float(np.mean(errors)) if errors else 0.0,
        mean_absolute_percentage_error=float(np.mean(np.abs(errors))) if errors else 0.0,
        excluded_precision=len(reports) - len(precisions),
        excluded_recall=len(reports) - len(recalls),
        excluded_f1=len(reports) - len(f1s),
    )


def method_comparison(reports_by_method: dict[str, list[CountReport]]
                      ) -> dict[str, AggregateSummary]:
    """Side-by-side aggregate per fitting method (counting-error comparison)."""
    return {method: aggregate(reports) for method, reports in reports_by_method.items()}
