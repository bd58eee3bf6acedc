"""Ranking and threshold metrics shared by every audit test.

All functions operate on plain score/label arrays. AUROC uses the
Mann-Whitney form with half credit for ties; AUPRC uses step-wise (not
trapezoidal) interpolation with tied scores moving across thresholds
together. Both conventions matter when comparing tables across runs, so
they are fixed here rather than configurable.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DegenerateLabelsError


@dataclass(frozen=True)
class ScoredLabels:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if scores.shape != labels.shape or scores.ndim != 1:
            raise ValueError("scores and labels must be equal-length vectors")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be binary")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)


def _ranks_average_ties(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(d: ScoredLabels) -> float:
    """Probability a random positive outranks a random negative (ties at 1/2)."""
    n_pos = int(d.labels.sum())
    n_neg = len(d.labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUROC needs at least one of each class")
    ranks = _ranks_average_ties(d.scores)
    pos_rank_sum = float(ranks[d.labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc(d: ScoredLabels) -> float:
    """Area under precision-recall, stepping over distinct score thresholds."""
    n_pos = int(d.labels.sum())
    if n_pos == 0:
        raise DegenerateLabelsError("AUPRC needs at least one positive")
    order = np.argsort(-d.scores, kind="mergesort")
    scores = d.scores[order]
    labels = d.labels[order]
    tp = 0
    seen = 0
    area = 0.0
    prev_recall = 0.0
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[j + 1] == scores[i]:
            j += 1
        tp += int(labels[i : j + 1].sum())
        seen = j + 1
        recall = tp / n_pos
        precision = tp / seen
        area += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return area


def threshold_metrics(d: ScoredLabels, thr: float) -> dict:
    """Precision/recall/F1 of the rule ``score >= thr``.

    Precision is reported as 0.0 when nothing is predicted positive, matching
    the reporting convention for all-negative rows.
    """
    preds = d.scores >= thr
    tp = int(np.sum(preds & (d.labels == 1)))
    fp = int(np.sum(preds & (d.labels == 0)))
    fn = int(np.sum(~preds & (d.labels == 1)))
    positive_count = tp + fp
    precision = tp / positive_count if positive_count else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if (precision + recall) > 0
        else 0.0
    )
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "positive_count": positive_count,
    }


def accuracy(d: ScoredLabels, thr: float = 0.5) -> float:
    preds = (d.scores >= thr).astype(int)
    return float(np.mean(preds == d.labels))


def min_k_score(logprobs, k: float = 0.2) -> float:
    """Mean of the ceil(k*n) smallest log-probabilities of a sequence."""
    lp = np.asarray(logprobs, dtype=float)
    if lp.size == 0:
        raise DegenerateInputError("min-k score of an empty sequence")
    if not 0 < k <= 1:
        raise ValueError("k must lie in (0, 1]")
    count = math.ceil(k * lp.size)
    smallest = np.sort(lp)[:count]
    return float(smallest.mean())


def code_frequency_correlation(generated, reference) -> dict:
    """Correlate generated vs reference code counts over the union vocabulary.

    Counts get add-one smoothing before the log for the Pearson side; the
    Spearman side is rank-based and unaffected by the smoothing.
    """
    gen_counts = Counter(generated)
    ref_counts = Counter(reference)
    if not gen_counts or not ref_counts:
        raise DegenerateInputError("both code multisets must be nonempty")
    vocab = sorted(set(gen_counts) | set(ref_counts))
    if len(vocab) < 2:
        raise DegenerateInputError("need at least 2 distinct codes")
    g = np.array([gen_counts.get(c, 0) for c in vocab], dtype=float)
    r = np.array([ref_counts.get(c, 0) for c in vocab], dtype=float)
    log_g = np.log(g + 1.0)
    log_r = np.log(r + 1.0)
    return {
        "pearson_log": _pearson(log_g, log_r),
        "spearman": _pearson(_ranks_average_ties(g), _ranks_average_ties(r)),
    }


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = float(np.sqrt((xc**2).sum() * (yc**2).sum()))
    if denom == 0.0:
        raise DegenerateInputError("correlation undefined for a constant vector")
    return float(np.dot(xc, yc) / denom)
