from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError


@dataclass
class PRCurve:
    """Operating points of the rule ``score > tau`` -> positive.

    Thresholds are decreasing, so recall is non-decreasing along the arrays.
    ``auc`` is average precision (step-wise area under the curve)."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    auc: float

    def recall_at_precision(self, min_precision: float = 1.0) -> float:
        ok = self.precision >= min_precision - 1e-12
        return float(self.recall[ok].max()) if ok.any() else 0.0

    def rows(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist()))


def pr_sweep(scores, labels) -> PRCurve:
    """Sweep tau over every distinct score. ``labels`` are 1 for the positive
    class (class B in an A/B test, where large scores favour B)."""
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError("bad-scores", "scores and labels must be equal-length 1-D arrays")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise DataError("single-class", "need both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # one operating point per distinct score: predict positive for score >= t
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    auc = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    # tau just below each distinct score so that "score > tau" matches ">= score"
    thresholds = np.nextafter(s[last], -np.inf)
    return PRCurve(thresholds, precision, recall, auc)
