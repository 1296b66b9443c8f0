"""Evaluation metrics: AUC, thresholded accuracy, fold-level paired t-test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    """Raised when a metric has no defined value (e.g. single-class AUC)."""


# Two-sided critical values of Student's t, df = 1..30. Keeping a table avoids
# depending on a numerical CDF in the library itself; 5-fold comparisons only
# ever use df=4.
_T_CRITICAL = {
    0.01: (
        63.657, 9.925, 5.841, 4.604, 4.032, 3.707, 3.499, 3.355, 3.250, 3.169,
        3.106, 3.055, 3.012, 2.977, 2.947, 2.921, 2.898, 2.878, 2.861, 2.845,
        2.831, 2.819, 2.807, 2.797, 2.787, 2.779, 2.771, 2.763, 2.756, 2.750,
    ),
    0.05: (
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
        2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
        2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ),
}


@dataclass(frozen=True)
class MetricResult:
    auc: float
    accuracy: float
    n_pos: int
    n_neg: int

    @classmethod
    def from_predictions(cls, scores, labels, threshold: float = 0.5) -> "MetricResult":
        scores = np.asarray(scores, dtype=float)
        labels = np.asarray(labels, dtype=int)
        return cls(
            auc=auc(scores, labels),
            accuracy=accuracy(scores, labels, threshold),
            n_pos=int((labels == 1).sum()),
            n_neg=int((labels == 0).sum()),
        )

    def to_dict(self) -> dict:
        return {"auc": self.auc, "accuracy": self.accuracy, "n_pos": self.n_pos, "n_neg": self.n_neg}


def auc(scores, labels) -> float:
    """Rank-based ROC AUC with average ranks for ties.

    Equals the probability that a uniformly random positive outranks a
    uniformly random negative, ties counting one half.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise ValueError(f"shape mismatch: {scores.shape} vs {labels.shape}")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC undefined: need both classes, got {n_pos} positives / {n_neg} negatives"
        )
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of predictions whose thresholded label matches; score == threshold
    counts as a positive prediction."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float(((scores >= threshold).astype(int) == labels).mean())


def paired_t_test(fold_scores_a, fold_scores_b, alpha: float = 0.01) -> str:
    """Two-sided paired t-test on per-fold scores.

    Returns ``"superior"`` / ``"equal"`` / ``"inferior"`` for a vs. b. Zero
    variance of the differences degenerates to a pure sign comparison.
    """
    a = np.asarray(fold_scores_a, dtype=float)
    b = np.asarray(fold_scores_b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two equal-length score vectors with at least 2 folds")
    if alpha not in _T_CRITICAL:
        raise ValueError(f"alpha must be one of {sorted(_T_CRITICAL)}, got {alpha}")
    df = a.size - 1
    if df > len(_T_CRITICAL[alpha]):
        raise ValueError(f"critical-value table covers df <= {len(_T_CRITICAL[alpha])}, got {df}")
    diff = a - b
    mean = diff.mean()
    sd = diff.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return "equal"
        return "superior" if mean > 0 else "inferior"
    t = mean / (sd / np.sqrt(a.size))
    if abs(t) < _T_CRITICAL[alpha][df - 1]:
        return "equal"
    return "superior" if t > 0 else "inferior"


MARKER_SYMBOLS = {"superior": "*", "equal": "o", "inferior": "."}
