"""Point-level anomaly segmentation metrics.

All metrics use step-function (non-interpolated) conventions with tied
scores grouped into a single threshold block, and are invariant under
strictly increasing transforms of the scores.  Metrics that are not
defined for an input (no positives, no negatives, empty range bin)
raise UndefinedMetricError or report a typed absence rather than 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedMetricError, ValidationError

DEFAULT_RANGE_EDGES = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)


@dataclass(frozen=True)
class EvalPair:
    """Per-point anomaly scores with binary ground truth and optional
    per-point sensor range in meters."""

    scores: np.ndarray
    truth: np.ndarray
    ranges: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        t = np.asarray(self.truth, dtype=bool)
        if s.ndim != 1 or t.shape != s.shape:
            raise ValidationError("scores and truth must be equal-length 1-D arrays")
        if not np.isfinite(s).all():
            raise ValidationError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "truth", t)
        if self.ranges is not None:
            r = np.asarray(self.ranges, dtype=np.float64)
            if r.shape != s.shape:
                raise ValidationError("ranges must match scores in length")
            object.__setattr__(self, "ranges", r)

    @property
    def positives(self) -> int:
        return int(self.truth.sum())

    @property
    def negatives(self) -> int:
        return int((~self.truth).sum())


def _require_both_classes(pair: EvalPair, metric: str) -> None:
    if pair.positives == 0:
        raise UndefinedMetricError(f"{metric} undefined: no positive points")
    if pair.negatives == 0:
        raise UndefinedMetricError(f"{metric} undefined: no negative points")


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    ordered = values[order]
    starts = np.flatnonzero(np.r_[True, ordered[1:] != ordered[:-1]])
    ends = np.r_[starts[1:], n]
    group_rank = 0.5 * (starts + ends - 1) + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


def auroc(pair: EvalPair) -> float:
    """Area under the ROC curve via the rank statistic, with tied
    positive/negative pairs contributing one half."""
    _require_both_classes(pair, "auroc")
    ranks = _average_ranks(pair.scores)
    p = pair.positives
    rank_sum = float(ranks[pair.truth].sum())
    return (rank_sum - 0.5 * p * (p + 1)) / (p * pair.negatives)


def _threshold_blocks(pair: EvalPair):
    """Cumulative (tp, fp) after each distinct score threshold, scores
    descending, ties grouped into one block."""
    order = np.argsort(-pair.scores, kind="stable")
    s = pair.scores[order]
    t = pair.truth[order]
    last_of_block = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(t)[last_of_block].astype(np.float64)
    fp = np.cumsum(~t)[last_of_block].astype(np.float64)
    thresholds = s[last_of_block]
    return tp, fp, thresholds


def roc_curve(pair: EvalPair):
    """Step ROC curve: (fpr, tpr, thresholds), starting at (0, 0)."""
    _require_both_classes(pair, "roc curve")
    tp, fp, thresholds = _threshold_blocks(pair)
    tpr = np.r_[0.0, tp / pair.positives]
    fpr = np.r_[0.0, fp / pair.negatives]
    return fpr, tpr, thresholds


def auroc_trapezoid(pair: EvalPair) -> float:
    """AUROC by trapezoidal integration of the ROC curve; must agree
    with the rank-statistic form."""
    fpr, tpr, _ = roc_curve(pair)
    return float(0.5 * np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1])))


def fpr_at_tpr(pair: EvalPair, tpr_target: float = 0.95) -> float:
    """False-positive rate at the largest threshold whose true-positive
    rate reaches the target (step convention, no interpolation)."""
    _require_both_classes(pair, "fpr_at_tpr")
    tp, fp, _ = _threshold_blocks(pair)
    tpr = tp / pair.positives
    k = int(np.argmax(tpr >= tpr_target))
    if tpr[k] < tpr_target:
        raise UndefinedMetricError(f"no threshold reaches TPR {tpr_target}")
    return float(fp[k] / pair.negatives)


def average_precision(pair: EvalPair) -> float:
    """Step-interpolated average precision over descending-score
    prefixes, ties grouped as one threshold block."""
    if pair.positives == 0:
        raise UndefinedMetricError("average precision undefined: no positive points")
    tp, fp, _ = _threshold_blocks(pair)
    recall = tp / pair.positives
    precision = tp / (tp + fp)
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def range_binned_ap(pair: EvalPair, edges=DEFAULT_RANGE_EDGES) -> dict:
    """Average precision per range bin [e_i, e_i+1).

    Returns {"0_10": ap, ...}; bins without positive points map to
    None (undefined), never to 0 or NaN.
    """
    if pair.ranges is None:
        raise ValidationError("range_binned_ap needs per-point ranges")
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or (np.diff(edges) <= 0).any():
        raise ValidationError("edges must be strictly increasing with at least two entries")

    out: dict[str, float | None] = {}
    for lo, hi in zip(edges[:-1], edges[1:]):
        key = f"{lo:g}_{hi:g}".replace(".", "p")
        inside = (pair.ranges >= lo) & (pair.ranges < hi)
        if not inside.any() or not pair.truth[inside].any():
            out[key] = None
            continue
        sub = EvalPair(pair.scores[inside], pair.truth[inside])
        out[key] = average_precision(sub)
    return out
