"""Threshold-free binary classification metrics: AUROC, FPR at 95% TPR, AUPR.

Conventions (fixed here because they vary across libraries):
  auroc          Mann-Whitney rank statistic with midrank ties: the probability
                 a random positive outscores a random negative, ties worth 0.5.
  fpr_at_95_tpr  discrete sweep over observed score thresholds, descending,
                 prediction rule score >= threshold; FPR at the first threshold
                 whose TPR reaches 0.95 (no interpolation).
  aupr           average precision: sum of precision * recall increments over
                 the same descending threshold sweep, ties grouped.

Higher score must mean "more likely positive"; callers flip lower-is-correct
scores before building a ScoredSet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DomainError


@dataclass
class ScoredSet:
    """Parallel scores and binary labels (True = positive class)."""

    scores: np.ndarray  # float64 [n]
    labels: np.ndarray  # bool [n]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.scores.ndim != 1 or self.scores.shape != self.labels.shape:
            raise DomainError("scores and labels must be 1-d arrays of equal length")
        if not np.all(np.isfinite(self.scores)):
            raise DomainError("scores must be finite")

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int((~self.labels).sum())


def _require_both_classes(s: ScoredSet) -> None:
    if s.n_pos == 0 or s.n_neg == 0:
        raise DegenerateInputError(
            f"need at least one positive and one negative, got {s.n_pos}/{s.n_neg}"
        )


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their group's average rank."""
    n = values.shape[0]
    idx = np.argsort(values, kind="mergesort")
    ordered = values[idx]
    new_group = np.r_[True, ordered[1:] != ordered[:-1]]
    group_id = np.cumsum(new_group) - 1
    counts = np.bincount(group_id)
    starts = np.cumsum(counts) - counts
    mid = starts + (counts + 1) / 2.0  # exact: counts+1 halves are representable
    ranks = np.empty(n, dtype=np.float64)
    ranks[idx] = mid[group_id]
    return ranks


def auroc(s: ScoredSet) -> float:
    _require_both_classes(s)
    ranks = _midranks(s.scores)
    p = s.n_pos
    u = ranks[s.labels].sum() - p * (p + 1) / 2.0
    return float(u / (p * s.n_neg))


def _sweep_counts(s: ScoredSet):
    """Cumulative TP/FP after each distinct threshold, thresholds descending."""
    order = np.argsort(-s.scores, kind="mergesort")
    sorted_scores = s.scores[order]
    sorted_pos = s.labels[order].astype(np.int64)
    # last index of each tie group marks the cumulative counts at that threshold
    boundary = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tp = np.cumsum(sorted_pos)[boundary]
    fp = np.cumsum(1 - sorted_pos)[boundary]
    thresholds = sorted_scores[boundary]
    return thresholds, tp, fp


def fpr_at_95_tpr(s: ScoredSet, target_tpr: float = 0.95) -> float:
    _require_both_classes(s)
    _, tp, fp = _sweep_counts(s)
    tpr = tp / s.n_pos
    hit = np.nonzero(tpr >= target_tpr)[0]
    first = int(hit[0])  # the lowest threshold always reaches TPR 1.0
    return float(fp[first] / s.n_neg)


def aupr(s: ScoredSet) -> float:
    _require_both_classes(s)
    _, tp, fp = _sweep_counts(s)
    recall = tp / s.n_pos
    precision = tp / (tp + fp)
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def roc_points(s: ScoredSet):
    """(fpr, tpr) arrays over the descending threshold sweep, anchored at (0,0)."""
    _require_both_classes(s)
    _, tp, fp = _sweep_counts(s)
    tpr = np.r_[0.0, tp / s.n_pos]
    fpr = np.r_[0.0, fp / s.n_neg]
    return fpr, tpr
