"""Evaluation protocol: accuracy, AUC-ROC variants, paired bootstrap,
exact Wilcoxon signed-rank tests, CV aggregation, significance groups.

The binary AUC is the Mann-Whitney statistic (ties count one half).
Multiclass AUCs are macro averages: one-vs-rest over classes present,
one-vs-one over unordered class pairs with both directions averaged.
Bootstrap resample indices depend only on (seed, fold), never on the
model, so replicates are paired across models on a shared test set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class UndefinedMetricError(ValueError):
    """Metric has no value on this sample (e.g. a single-class AUC input)."""


@dataclass
class PredictionSet:
    """Per-sample scores and ground truth for one model on one test set."""

    scores: np.ndarray
    labels: np.ndarray
    model_id: str = ""
    fold_id: int = 0

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim == 1:
            self.scores = self.scores[:, None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n, c = self.scores.shape
        if n < 1 or len(self.labels) != n:
            raise ValueError("scores and labels must align and be nonempty")
        if c > 1 and not np.allclose(self.scores.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("multiclass score rows must sum to 1")

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]

    def take(self, idx) -> "PredictionSet":
        return PredictionSet(self.scores[idx], self.labels[idx], self.model_id, self.fold_id)


@dataclass
class MetricResult:
    point: float
    boot_mean: float
    boot_std: float
    replicates: np.ndarray


@dataclass
class ComparisonCell:
    model_id: str
    mean: float
    std: float
    p_vs_best: float
    is_best_group: bool


def accuracy(pred: PredictionSet) -> float:
    """Fraction of rows whose argmax score (ties to lowest class) is the label."""
    if pred.n_classes == 1:
        picks = (pred.scores[:, 0] >= 0.5).astype(np.int64)
    else:
        picks = pred.scores.argmax(axis=1)
    return float(np.mean(picks == pred.labels))


def auc_binary(scores, labels) -> float:
    """Mann-Whitney AUC: (concordant + 0.5 * tied) / (positives * negatives)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("AUC undefined: one class absent")
    # midrank formulation; exact halves, so it matches pair counting bitwise
    merged = np.concatenate([neg, pos])
    ranks = _midranks(merged)
    rank_sum = ranks[len(neg):].sum()
    n_pos, n_neg = len(pos), len(neg)
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc_ovr(pred: PredictionSet) -> float:
    """Macro one-vs-rest AUC over classes present in the labels."""
    present = np.unique(pred.labels)
    if len(present) < 2:
        raise UndefinedMetricError("OvR AUC needs at least two classes present")
    terms = [
        auc_binary(pred.scores[:, k], (pred.labels == k).astype(int)) for k in present
    ]
    return float(np.mean(terms))


def auc_ovo(pred: PredictionSet) -> float:
    """Macro one-vs-one AUC: unordered pairs, both directions averaged."""
    present = np.unique(pred.labels)
    if len(present) < 2:
        raise UndefinedMetricError("OvO AUC needs at least two classes present")
    pair_values = []
    for a_idx in range(len(present)):
        for b_idx in range(a_idx + 1, len(present)):
            a, b = present[a_idx], present[b_idx]
            mask = (pred.labels == a) | (pred.labels == b)
            labels_a = (pred.labels[mask] == a).astype(int)
            a_ab = auc_binary(pred.scores[mask, a], labels_a)
            a_ba = auc_binary(pred.scores[mask, b], 1 - labels_a)
            pair_values.append((a_ab + a_ba) / 2.0)
    return float(np.mean(pair_values))


MAX_REDRAWS = 100


def bootstrap_metric(metric, pred: PredictionSet, n_boot: int, seed: int) -> MetricResult:
    """Paired bootstrap over row indices.

    The index stream depends only on (seed, fold_id); degenerate
    resamples are redrawn from the same stream (at most 100 times each),
    which keeps replicate b identical for every model sharing labels.
    """
    if n_boot < 1:
        raise ValueError("need at least one bootstrap replicate")
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(pred.fold_id), 0xB007])
    )
    n = len(pred.labels)
    replicates = np.empty(n_boot)
    draws = failures = 0
    for b in range(n_boot):
        for _attempt in range(MAX_REDRAWS):
            idx = rng.integers(0, n, size=n)
            draws += 1
            try:
                replicates[b] = metric(pred.take(idx))
                break
            except UndefinedMetricError:
                failures += 1
        else:
            raise UndefinedMetricError(
                f"metric undefined after {MAX_REDRAWS} redraws of replicate {b}"
            )
        if failures > draws / 2 and draws >= 10:
            raise UndefinedMetricError(
                f"metric undefined on {failures}/{draws} bootstrap resamples"
            )
    return MetricResult(
        point=float(metric(pred)),
        boot_mean=float(replicates.mean()),
        boot_std=float(replicates.std(ddof=1)) if n_boot > 1 else 0.0,
        replicates=replicates,
    )


EXACT_ENUMERATION_LIMIT = 20


def wilcoxon_signed_rank(x, y) -> float:
    """Two-sided p-value of the paired Wilcoxon signed-rank test.

    Zero differences are dropped; tied absolute differences receive
    midranks. The null distribution is computed exactly (all sign
    assignments) for up to 20 remaining pairs, and by a normal
    approximation with tie correction and continuity correction above.
    All differences zero yields p = 1.0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 1:
        raise ValueError("x and y must be equal-length nonempty vectors")
    d = x - y
    d = d[d != 0.0]
    m = len(d)
    if m == 0:
        return 1.0
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if m <= EXACT_ENUMERATION_LIMIT:
        return _exact_two_sided_p(ranks, w_plus)
    return _normal_two_sided_p(ranks, w_plus, m)


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    # doubled midranks are integers; count sign assignments by rank sum
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        new = counts.copy()
        new[r:] += counts[: total + 1 - r]
        counts = new
    observed = int(round(2.0 * w_plus))
    # symmetric about total/2: both tails at least as extreme as observed
    dev = abs(2 * observed - total)
    sums = 2 * np.arange(total + 1) - total
    extreme = np.abs(sums) >= dev
    return float(counts[extreme].sum() / counts.sum())


def _normal_two_sided_p(ranks: np.ndarray, w_plus: float, m: int) -> float:
    mean = m * (m + 1) / 4.0
    var = m * (m + 1) * (2 * m + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if var <= 0:
        return 1.0
    dev = abs(w_plus - mean)
    z = max(dev - 0.5, 0.0) / math.sqrt(var)
    return float(math.erfc(z / math.sqrt(2.0)))


def significance_groups(
    cells: list[tuple[str, np.ndarray]], threshold: float = 0.1
) -> list[ComparisonCell]:
    """Best-by-mean model plus every model not significantly below it.

    The best model carries p = 1.0 by convention; the others carry their
    paired Wilcoxon p-value against the best.
    """
    if len(cells) < 2:
        raise ValueError("need at least two models to compare")
    values = [np.asarray(v, dtype=np.float64) for _, v in cells]
    length = len(values[0])
    if any(len(v) != length for v in values):
        raise ValueError("all value vectors must have the same length")
    means = [float(v.mean()) for v in values]
    best = int(np.argmax(means))
    out = []
    for i, (model_id, _) in enumerate(cells):
        if i == best:
            p = 1.0
        else:
            p = wilcoxon_signed_rank(values[i], values[best])
        out.append(
            ComparisonCell(
                model_id=model_id,
                mean=means[i],
                std=float(values[i].std(ddof=1)) if length > 1 else 0.0,
                p_vs_best=p,
                is_best_group=p > threshold,
            )
        )
    return out


def cv_aggregate(per_fold) -> tuple[float, float]:
    """Sample mean and standard deviation over fold values."""
    per_fold = np.asarray(per_fold, dtype=np.float64)
    if len(per_fold) < 2:
        raise ValueError("need at least two folds to aggregate")
    return float(per_fold.mean()), float(per_fold.std(ddof=1))
