"""Metric and statistics tests against brute-force oracles."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhet import evalstats
from fedhet.evalstats import (
    ComparisonCell,
    PredictionSet,
    UndefinedMetricError,
    accuracy,
    auc_binary,
    auc_ovo,
    auc_ovr,
    bootstrap_metric,
    cv_aggregate,
    significance_groups,
    wilcoxon_signed_rank,
)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def auc_pair_counting(scores, labels):
    """Exhaustive Mann-Whitney pair counting."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def wilcoxon_brute_force(x, y):
    """Two-sided p by enumerating all sign assignments."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    d = d[d != 0]
    m = len(d)
    if m == 0:
        return 1.0
    absd = np.abs(d)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(m)
    sorted_abs = absd[order]
    i = 0
    while i < m:
        j = i
        while j + 1 < m and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    w_obs = ranks[d > 0].sum()
    mean = ranks.sum() / 2
    count = 0
    for signs in itertools.product((0, 1), repeat=m):
        w = sum(r for r, s in zip(ranks, signs) if s)
        if abs(w - mean) >= abs(w_obs - mean) - 1e-12:
            count += 1
    return count / 2**m


# ---------------------------------------------------------------------------
# accuracy
# ---------------------------------------------------------------------------


def test_accuracy_all_correct():
    pred = PredictionSet(np.eye(3), np.array([0, 1, 2]))
    assert accuracy(pred) == 1.0


def test_accuracy_all_wrong():
    pred = PredictionSet(np.eye(3), np.array([1, 2, 0]))
    assert accuracy(pred) == 0.0


def test_accuracy_three_of_five():
    scores = np.zeros((5, 2))
    scores[:, 0] = [0.9, 0.9, 0.9, 0.1, 0.1]
    scores[:, 1] = 1 - scores[:, 0]
    pred = PredictionSet(scores, np.array([0, 0, 0, 0, 0]))
    assert accuracy(pred) == 0.6


def test_accuracy_ties_to_lowest_class():
    pred = PredictionSet(np.full((2, 4), 0.25), np.array([0, 1]))
    assert accuracy(pred) == 0.5


# ---------------------------------------------------------------------------
# binary AUC
# ---------------------------------------------------------------------------


def test_auc_perfect_separation():
    assert auc_binary([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


def test_auc_all_tied():
    assert auc_binary([0.5] * 6, [0, 0, 0, 1, 1, 1]) == 0.5


def test_auc_fixture():
    # 4 pos/neg pairs: (0.35>0.1)+(0.35<0.4)+(0.8>0.1)+(0.8>0.4) = 3/4
    assert auc_binary([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_single_class_raises():
    with pytest.raises(UndefinedMetricError):
        auc_binary([0.1, 0.2], [1, 1])


def test_auc_matches_pair_counting_exactly():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n = int(rng.integers(4, 31))
        labels = np.zeros(n, dtype=int)
        labels[: int(rng.integers(1, n))] = 1
        rng.shuffle(labels)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        # quantized scores force ties
        scores = np.round(rng.random(n), 1)
        assert auc_binary(scores, labels) == auc_pair_counting(scores, labels)


def test_auc_complement_symmetry():
    rng = np.random.default_rng(3)
    scores = rng.permutation(np.linspace(0, 1, 20))  # tie-free
    labels = (rng.random(20) < 0.5).astype(int)
    labels[0], labels[1] = 0, 1
    assert auc_binary(scores, labels) + auc_binary(scores, 1 - labels) == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_auc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    n = 15
    scores = rng.random(n)
    labels = np.array([0, 1] + list((rng.random(n - 2) < 0.5).astype(int)))
    base = auc_binary(scores, labels)
    transformed = np.exp(3.0 * scores) + 1.0  # strictly increasing
    assert auc_binary(transformed, labels) == pytest.approx(base, abs=1e-12)


# ---------------------------------------------------------------------------
# multiclass AUC
# ---------------------------------------------------------------------------


def _random_pred(rng, n, c):
    scores = rng.random((n, c))
    scores /= scores.sum(axis=1, keepdims=True)
    labels = np.concatenate([np.arange(c), rng.integers(0, c, n - c)])
    return PredictionSet(scores, labels)


def test_ovr_two_class_equals_binary():
    rng = np.random.default_rng(0)
    pred = _random_pred(rng, 12, 2)
    # two symmetric terms, each equal to the class-1 AUC
    assert auc_ovr(pred) == pytest.approx(
        auc_binary(pred.scores[:, 1], (pred.labels == 1).astype(int)), abs=1e-12
    )


def test_ovr_perfect():
    labels = np.array([0, 1, 2, 0, 1, 2])
    scores = np.full((6, 3), 0.05)
    scores[np.arange(6), labels] = 0.9
    pred = PredictionSet(scores / scores.sum(axis=1, keepdims=True), labels)
    assert auc_ovr(pred) == 1.0


def test_ovr_matches_pair_counting():
    rng = np.random.default_rng(7)
    pred = _random_pred(rng, 8, 3)
    expected = np.mean(
        [
            auc_pair_counting(pred.scores[:, k], (pred.labels == k).astype(int))
            for k in np.unique(pred.labels)
        ]
    )
    assert auc_ovr(pred) == pytest.approx(expected, abs=1e-15)


def test_ovo_two_class_equals_binary():
    rng = np.random.default_rng(1)
    pred = _random_pred(rng, 10, 2)
    assert auc_ovo(pred) == pytest.approx(
        auc_binary(pred.scores[:, 1], (pred.labels == 1).astype(int)), abs=1e-12
    )


def test_ovo_perfect():
    labels = np.array([0, 1, 2] * 3)
    scores = np.full((9, 3), 0.05)
    scores[np.arange(9), labels] = 0.9
    pred = PredictionSet(scores / scores.sum(axis=1, keepdims=True), labels)
    assert auc_ovo(pred) == 1.0


def test_ovo_matches_pairwise_restriction_oracle():
    rng = np.random.default_rng(11)
    pred = _random_pred(rng, 9, 3)
    pair_values = []
    for a, b in [(0, 1), (0, 2), (1, 2)]:
        mask = (pred.labels == a) | (pred.labels == b)
        la = (pred.labels[mask] == a).astype(int)
        v1 = auc_pair_counting(pred.scores[mask, a], la)
        v2 = auc_pair_counting(pred.scores[mask, b], 1 - la)
        pair_values.append((v1 + v2) / 2)
    assert auc_ovo(pred) == pytest.approx(np.mean(pair_values), abs=1e-15)


def test_multiclass_single_class_raises():
    pred = PredictionSet(np.full((4, 3), 1 / 3), np.zeros(4, dtype=int))
    with pytest.raises(UndefinedMetricError):
        auc_ovr(pred)
    with pytest.raises(UndefinedMetricError):
        auc_ovo(pred)


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


def test_bootstrap_constant_metric_zero_std():
    pred = PredictionSet(np.eye(4), np.arange(4))
    res = bootstrap_metric(accuracy, pred, 50, seed=0)
    assert res.boot_std == 0.0
    assert res.boot_mean == 1.0


def test_bootstrap_single_replicate():
    pred = PredictionSet(np.eye(4), np.array([0, 1, 2, 0]))
    res = bootstrap_metric(accuracy, pred, 1, seed=3)
    assert res.boot_mean == res.replicates[0]
    assert res.boot_std == 0.0


def test_bootstrap_matches_reference_resampler():
    rng = np.random.default_rng(5)
    scores = rng.random((20, 1))
    labels = (rng.random(20) < 0.5).astype(int)
    pred = PredictionSet(scores, labels, fold_id=3)
    res = bootstrap_metric(accuracy, pred, 10, seed=99)
    # independently regenerate the index stream
    ref = np.random.default_rng(np.random.SeedSequence([99, 3, 0xB007]))
    for b in range(10):
        idx = ref.integers(0, 20, size=20)
        assert res.replicates[b] == accuracy(pred.take(idx))


def test_bootstrap_pairing_across_models():
    rng = np.random.default_rng(6)
    labels = np.array([0, 1] * 10)
    pred_a = PredictionSet(rng.random((20, 1)), labels, model_id="a", fold_id=2)
    pred_b = PredictionSet(rng.random((20, 1)), labels, model_id="b", fold_id=2)

    seen = {"a": [], "b": []}

    def spy_metric(pred):
        seen[pred.model_id].append(pred.labels.copy())
        return 0.5

    bootstrap_metric(spy_metric, pred_a, 8, seed=1)
    bootstrap_metric(spy_metric, pred_b, 8, seed=1)
    for la, lb in zip(seen["a"], seen["b"]):
        assert np.array_equal(la, lb)


def test_bootstrap_degenerate_redraw_abort():
    pred = PredictionSet(np.random.default_rng(0).random((5, 1)), np.ones(5, dtype=int))

    def metric(p):
        return auc_binary(p.scores[:, 0], p.labels)

    with pytest.raises(UndefinedMetricError):
        bootstrap_metric(metric, pred, 10, seed=0)


# ---------------------------------------------------------------------------
# Wilcoxon signed rank
# ---------------------------------------------------------------------------


def test_wilcoxon_five_one_sided():
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    y = x - 1.0
    assert wilcoxon_signed_rank(x, y) == pytest.approx(2 / 32)


def test_wilcoxon_identical_vectors():
    x = np.array([0.3, 0.4, 0.5])
    assert wilcoxon_signed_rank(x, x) == 1.0


def test_wilcoxon_n6_fixture_vs_enumeration():
    rng = np.random.default_rng(17)
    x = rng.random(6)
    y = rng.random(6)
    assert wilcoxon_signed_rank(x, y) == pytest.approx(wilcoxon_brute_force(x, y))


def test_wilcoxon_exact_all_small_n():
    rng = np.random.default_rng(23)
    for n in range(1, 13):
        for _ in range(3):
            x = np.round(rng.random(n), 1)  # rounding makes ties and zeros likely
            y = np.round(rng.random(n), 1)
            assert wilcoxon_signed_rank(x, y) == pytest.approx(
                wilcoxon_brute_force(x, y)
            ), (n, x, y)


def test_wilcoxon_two_sided_symmetry():
    rng = np.random.default_rng(29)
    x = rng.random(9)
    y = rng.random(9)
    assert wilcoxon_signed_rank(x, y) == pytest.approx(wilcoxon_signed_rank(y, x))


def test_wilcoxon_normal_approximation_branch():
    rng = np.random.default_rng(31)
    x = rng.random(40)
    y = x + rng.normal(0, 0.2, 40)
    p = wilcoxon_signed_rank(x, y)
    assert 0.0 < p <= 1.0


# ---------------------------------------------------------------------------
# significance groups and CV aggregation
# ---------------------------------------------------------------------------


def test_groups_identical_models_share_best():
    v = np.array([0.7, 0.72, 0.71, 0.69, 0.7])
    cells = significance_groups([("a", v), ("b", v.copy())])
    assert all(c.is_best_group for c in cells)
    assert sum(c.p_vs_best == 1.0 for c in cells) >= 1


def test_groups_dominated_model_excluded():
    best = np.array([0.9, 0.91, 0.92, 0.9, 0.93])
    worse = best - 0.05
    cells = {c.model_id: c for c in significance_groups([("w", worse), ("b", best)])}
    assert cells["b"].p_vs_best == 1.0 and cells["b"].is_best_group
    assert cells["w"].p_vs_best == pytest.approx(0.0625)
    assert not cells["w"].is_best_group


def test_groups_one_tie_gives_group_of_two():
    best = np.array([0.9, 0.91, 0.92, 0.9, 0.93])
    tied = best + np.array([0.01, -0.01, 0.005, -0.005, 0.0])  # mixed signs
    worse = best - 0.05
    cells = {
        c.model_id: c
        for c in significance_groups([("best", best), ("tied", tied), ("worse", worse)])
    }
    assert wilcoxon_brute_force(tied, best) > 0.1
    assert cells["tied"].is_best_group
    assert not cells["worse"].is_best_group
    assert sum(c.is_best_group for c in cells.values()) == 2


def test_groups_requires_two_models():
    with pytest.raises(ValueError):
        significance_groups([("only", np.array([1.0, 2.0]))])


def test_cv_aggregate():
    assert cv_aggregate([0.5, 0.5, 0.5]) == (0.5, 0.0)
    assert cv_aggregate([0.0, 1.0])[0] == 0.5
    values = [0.1, 0.2, 0.3, 0.4, 0.5]
    mean, std = cv_aggregate(values)
    assert mean == pytest.approx(0.3)
    assert std == pytest.approx(np.std(values, ddof=1))
    with pytest.raises(ValueError):
        cv_aggregate([0.5])


def test_metrics_stay_in_unit_interval():
    rng = np.random.default_rng(41)
    for _ in range(20):
        pred = _random_pred(rng, 12, 3)
        for fn in (accuracy, auc_ovr, auc_ovo):
            assert 0.0 <= fn(pred) <= 1.0
