"""Open-set detection metrics and closed-set mean average precision.

Positives are novel actors throughout.  A threshold t labels an actor novel
when its score is >= t, so tied scores always cross a threshold together.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .subjective_logic import DEFAULT_BASE_RATE, DEFAULT_PRIOR_WEIGHT, MECHANISMS, novelty_score_arrays, opinion_arrays

__all__ = [
    "TPR_TARGET",
    "ScoredSet",
    "CurveMetrics",
    "roc_points",
    "binary_curve_metrics",
    "average_precision",
    "MapReport",
    "mean_ap",
    "open_set_report",
]

TPR_TARGET = 0.95


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    truths: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float).reshape(-1)
        t = np.asarray(self.truths).reshape(-1)
        if s.shape != t.shape:
            raise ValueError(f"scores and truths differ in length: {s.size} vs {t.size}")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("truths must be 0/1")
        n_pos = int(t.sum())
        if n_pos == 0 or n_pos == t.size:
            raise ValueError("need at least one positive and one negative")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "truths", t.astype(int))


@dataclass(frozen=True)
class CurveMetrics:
    auroc: float
    aupr: float
    fpr_at_95tpr: float
    detection_error: float
    tpr_at_operating: float
    operating_threshold: float

    def as_dict(self) -> dict:
        return asdict(self)


def roc_points(data: ScoredSet):
    """Cumulative (thresholds, tp, fp) at each distinct score, highest first."""
    order = np.argsort(-data.scores, kind="mergesort")
    s = data.scores[order]
    t = data.truths[order]
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(t)[ends].astype(float)
    fp = (ends + 1) - tp
    return s[ends], tp, fp


def binary_curve_metrics(data: ScoredSet) -> CurveMetrics:
    """AUROC, AUPR, FPR and detection error at the 95%-TPR operating point.

    The operating threshold is the largest one whose TPR reaches 0.95; the
    realised TPR there is reported alongside and used in the detection error
    0.5 (1 - TPR) + 0.5 FPR.
    """
    thresholds, tp, fp = roc_points(data)
    n_pos = float(data.truths.sum())
    n_neg = float(data.truths.size) - n_pos
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    auroc = float(np.trapezoid(tpr, fpr))

    recall = tpr
    precision = np.r_[1.0, tp / (tp + fp)]
    aupr = float(np.trapezoid(precision, recall))

    k = int(np.argmax(tp / n_pos >= TPR_TARGET - 1e-12))
    op_tpr = float(tp[k] / n_pos)
    op_fpr = float(fp[k] / n_neg)
    return CurveMetrics(
        auroc=auroc,
        aupr=aupr,
        fpr_at_95tpr=op_fpr,
        detection_error=0.5 * (1.0 - op_tpr) + 0.5 * op_fpr,
        tpr_at_operating=op_tpr,
        operating_threshold=float(thresholds[k]),
    )


def average_precision(scores, truths) -> float:
    """Step-sum AP: sum over distinct thresholds of (R_k - R_{k-1}) P_k."""
    t = np.asarray(truths).reshape(-1)
    s = np.asarray(scores, dtype=float).reshape(-1)
    if s.shape != t.shape:
        raise ValueError(f"scores and truths differ in length: {s.size} vs {t.size}")
    if t.sum() == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, t = s[order], t[order]
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(t)[ends].astype(float)
    precision = tp / (ends + 1)
    recall = tp / tp[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass(frozen=True)
class MapReport:
    value: float
    per_class: dict
    skipped: list


def mean_ap(prob, truth) -> MapReport:
    """Mean of per-class AP over classes with at least one positive.

    Classes without positives are skipped and listed in ``skipped``.
    """
    prob = np.atleast_2d(np.asarray(prob, dtype=float))
    truth = np.atleast_2d(np.asarray(truth))
    if prob.shape != truth.shape:
        raise ValueError(f"shape mismatch: {prob.shape} vs {truth.shape}")
    per_class, skipped = {}, []
    for i in range(prob.shape[1]):
        if truth[:, i].sum() == 0:
            skipped.append(i)
        else:
            per_class[i] = average_precision(prob[:, i], truth[:, i])
    if not per_class:
        raise ValueError("no class has a positive example")
    return MapReport(float(np.mean(list(per_class.values()))), per_class, skipped)


def open_set_report(
    alpha,
    beta,
    novelty,
    known_truth,
    mechanisms=MECHANISMS,
    W: float = DEFAULT_PRIOR_WEIGHT,
    a: float = DEFAULT_BASE_RATE,
) -> dict:
    """Table-shaped metrics for a test set.

    ``known_truth`` is the n x K multi-hot over the known classes; closed-set
    mAP is computed on actors with novelty 0 using p = b + a u.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    novelty = np.asarray(novelty).astype(int)
    unknown = [m for m in mechanisms if m not in MECHANISMS]
    if unknown:
        raise ValueError(f"unknown mechanisms {unknown}; choose from {MECHANISMS}")
    scores = novelty_score_arrays(alpha, beta, W=W, a=a)
    rows = []
    for name in mechanisms:
        cm = binary_curve_metrics(ScoredSet(scores[name], novelty))
        rows.append({
            "mechanism": name,
            "error": cm.detection_error,
            "auroc": cm.auroc,
            "aupr": cm.aupr,
            "fpr_at_95tpr": cm.fpr_at_95tpr,
            "tpr_at_operating": cm.tpr_at_operating,
        })
    known = novelty == 0
    _, _, _, p = opinion_arrays(alpha[known], beta[known], W=W, a=a)
    m = mean_ap(p, np.asarray(known_truth)[known])
    return {
        "open_set": rows,
        "closed_set": {
            "mAP": m.value,
            "evaluated_classes": sorted(m.per_class),
            "skipped_classes": m.skipped,
        },
    }
