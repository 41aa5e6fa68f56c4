from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from beatsynth.metrics import (
    EvalReport, HarnessConfig, MetricUndefinedError, average_precision, avg_distance_to_template,
    binary_scores, classification_harness, dtw, evaluate_case, frechet_discrete, mmd_linear, pr_curve,
    pr_curve_auc, roc_auc, roc_curve,
)
from beatsynth.classifier import ClassifierConfig
from beatsynth.signal import BeatSeries


# ---------------------------------------------------------------- brute-force oracles

def monotone_paths(n, m):
    """Every warping path from (0, 0) to (n-1, m-1) using steps (1,0), (0,1), (1,1)."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                for rest in walk(i + di, j + dj):
                    yield [(i, j)] + rest
    return list(walk(0, 0))


def brute_dtw(a, b):
    best = np.inf
    for path in monotone_paths(len(a), len(b)):
        total = 0.0
        for i, j in path:
            total += abs(a[i] - b[j])
        best = min(best, total)
    return best


def brute_frechet(a, b):
    return min(max(abs(a[i] - b[j]) for i, j in path) for path in monotone_paths(len(a), len(b)))


def test_dtw_examples():
    assert dtw([0, 1, 2], [0, 1, 2]) == 0.0
    assert dtw([0], [1]) == 1.0
    assert dtw([0, 0, 1], [0, 1]) == 0.0
    with pytest.raises(ValueError):
        dtw([], [1])


def test_frechet_examples():
    a = np.array([0.2, -1.0, 3.0])
    assert frechet_discrete(a, a) == 0.0
    assert frechet_discrete(a, a + 0.75) == 0.75
    assert frechet_discrete([0, 2], [0, 1]) == 1.0
    with pytest.raises(ValueError):
        frechet_discrete([1], [])


def test_dp_against_exhaustive_search():
    rng = np.random.default_rng(0)
    for _ in range(500):
        a = rng.normal(size=rng.integers(1, 6))
        b = rng.normal(size=rng.integers(1, 6))
        assert dtw(a, b) == brute_dtw(a, b)
        assert frechet_discrete(a, b) == brute_frechet(a, b)


seqs = arrays(np.float64, st.integers(1, 12), elements=st.floats(-5, 5, allow_nan=False))


@given(seqs, seqs)
def test_distance_properties(a, b):
    assert dtw(a, a) == 0.0
    assert dtw(a, b) == pytest.approx(dtw(b, a), abs=1e-12)
    assert frechet_discrete(a, b) >= max(abs(a[0] - b[0]), abs(a[-1] - b[-1]))
    assert dtw(a, b) >= frechet_discrete(a, b)


def test_average_distance():
    t = np.zeros(4)
    assert avg_distance_to_template([t], t) == 0.0
    assert avg_distance_to_template([np.full(1, 1.0), np.full(1, 3.0)], np.zeros(1)) == 2.0
    assert avg_distance_to_template([np.full(1, 1.0), np.full(1, 3.0)], np.zeros(1), "frechet") == 2.0
    with pytest.raises(ValueError):
        avg_distance_to_template([], t)


# ---------------------------------------------------------------- MMD

def kernel_mmd(X, Y):
    k = lambda A, B: np.mean([[a @ b for b in B] for a in A])
    return k(X, X) + k(Y, Y) - 2 * k(X, Y)


def test_mmd_examples():
    X = np.random.default_rng(0).normal(size=(10, 4))
    assert mmd_linear(X, X[::-1]) == 0.0
    e = np.zeros(4)
    e[2] = 1.0
    assert mmd_linear(X, X + e) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        mmd_linear(X, X[:, :3])


def test_mmd_matches_kernel_sums():
    rng = np.random.default_rng(1)
    for _ in range(20):
        X = rng.normal(size=(rng.integers(1, 15), 6))
        Y = rng.normal(0.3, 1.2, size=(rng.integers(1, 15), 6))
        assert abs(mmd_linear(X, Y) - kernel_mmd(X, Y)) <= 1e-8
        assert mmd_linear(X, Y) >= 0


# ---------------------------------------------------------------- classification scores

def test_binary_scores_cases():
    s = binary_scores([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9])
    assert s.precision == 1.0 and s.recall == 1.0
    assert np.array_equal(s.confusion, [[100, 0], [0, 100]])
    s = binary_scores([0, 1, 0, 1], [0.9] * 4)
    assert s.precision == 0.5 and s.recall == 1.0
    # hand case: tp=1 (0.7), fp=1 (0.6), fn=0 -> precision 1/2
    s = binary_scores([1, 0, 0], [0.7, 0.6, 0.1])
    assert s.counts == {"tp": 1, "fp": 1, "fn": 0, "tn": 1}
    assert s.precision == 0.5
    assert np.allclose(s.confusion, [[50, 50], [0, 100]])


def test_binary_scores_undefined_precision_is_flagged():
    s = binary_scores([1, 1, 1], [0.9, 0.2, 0.7])
    assert s.precision is None and "single_class_labels" in s.flags
    s = binary_scores([0, 1], [0.1, 0.2])
    assert s.precision is None and "no_positive_predictions" in s.flags


def brute_pr(labels, scores):
    labels, scores = np.asarray(labels), np.asarray(scores)
    pos = labels.sum()
    pts = [(Fraction(0), Fraction(1))]
    for th in sorted(set(scores), reverse=True):
        pred = scores >= th
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        pts.append((Fraction(tp, int(pos)), Fraction(tp, tp + fp)))
    ap = sum((r1 - r0) * p1 for (r0, _), (r1, p1) in zip(pts, pts[1:]))
    auc = sum((r1 - r0) * (p0 + p1) / 2 for (r0, p0), (r1, p1) in zip(pts, pts[1:]))
    return pts, float(ap), float(auc)


def brute_roc(labels, scores):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_curves_match_pair_counting_oracles():
    rng = np.random.default_rng(3)
    for _ in range(50):
        labels = rng.integers(0, 2, 50)
        labels[:2] = [0, 1]
        scores = np.round(rng.random(50) + 0.3 * labels, 1)  # rounding forces ties
        pts, ap, auc = brute_pr(labels, scores)
        r, p, _ = pr_curve(labels, scores)
        assert np.max(np.abs(r - [float(a) for a, _ in pts])) <= 1e-12
        assert np.max(np.abs(p - [float(b) for _, b in pts])) <= 1e-12
        assert abs(average_precision(labels, scores) - ap) <= 1e-12
        assert abs(pr_curve_auc(labels, scores)[1] - auc) <= 1e-12
        assert abs(roc_auc(labels, scores) - brute_roc(labels, scores)) <= 1e-12


def test_ranking_examples():
    y = [0, 0, 1, 1]
    assert pr_curve_auc(y, [0.1, 0.2, 0.8, 0.9])[1] == 1.0
    assert average_precision(y, [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert roc_auc(y, [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert roc_auc(y, [0.5] * 4) == 0.5
    assert average_precision(y, [0.5] * 4) == 0.5
    # reversed ranking: positives surface at 3/3 and 4/4 -> 1/2 * 1/3 + 1/2 * 1/2
    assert average_precision(y, [0.9, 0.8, 0.2, 0.1]) == pytest.approx(5 / 12, abs=1e-15)
    assert roc_auc([1, 0, 1, 0, 0], [0.9, 0.8, 0.4, 0.4, 0.1]) == brute_roc([1, 0, 1, 0, 0], [0.9, 0.8, 0.4, 0.4, 0.1])


def test_single_class_rejected():
    for fn in (average_precision, roc_auc, lambda y, s: pr_curve_auc(y, s), roc_curve):
        with pytest.raises(MetricUndefinedError):
            fn([1, 1, 1], [0.1, 0.5, 0.9])


@given(st.lists(st.integers(-30, 30), min_size=4, max_size=30), st.integers(0, 1000))
@settings(max_examples=40)
def test_roc_invariant_to_monotone_transform(scores, seed):
    # integer scores keep the transformed values distinct after rounding
    labels = np.random.default_rng(seed).integers(0, 2, len(scores))
    labels[:2] = [0, 1]
    s = np.array(scores, dtype=np.float64)
    assert roc_auc(labels, s) == roc_auc(labels, np.exp(s / 7.0) + 1)


# ---------------------------------------------------------------- harness

T = np.linspace(0, 1, 32)


def toy(n, label, seed, noise=0.15):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        c = rng.uniform(0.45, 0.55)
        x = np.exp(-((T - c) / 0.06) ** 2) if label == "N" else \
            np.exp(-((T - c) / 0.12) ** 2) + 0.5 * np.exp(-((T - c - 0.15) / 0.06) ** 2)
        x = x + noise * rng.standard_normal(T.size)
        out.append(BeatSeries(2 * (x - x.min()) / (x.max() - x.min()) - 1, label, "toy", i, True))
    return out


FAST = HarnessConfig(train_per_class=60, minority=3, test_per_class=20,
                     classifier=ClassifierConfig(widths=(4, 8), epochs=15))


def test_harness_scenarios_and_determinism():
    args = (toy(90, "N", 0), toy(60, "L", 1), toy(20, "N", 2) + toy(20, "L", 3), {"X": toy(57, "N", 4)})
    a = classification_harness(*args, cfg=FAST, seed=1)
    b = classification_harness(*args, cfg=FAST, seed=1)
    assert set(a) == {"balanced", "imbalanced", "augmented:X", "real_augmented"}
    for k in a:
        assert a[k].precision == b[k].precision and a[k].roc_auc == b[k].roc_auc
        assert np.array_equal(a[k].confusion, b[k].confusion)
    assert a["balanced"].precision > a["imbalanced"].precision


def test_harness_errors():
    n, l, test = toy(60, "N", 0), toy(60, "L", 1), toy(20, "N", 2) + toy(20, "L", 3)
    with pytest.raises(ValueError, match="short by 7"):
        classification_harness(n, l, test, {"X": toy(50, "N", 4)}, cfg=FAST)
    with pytest.raises(ValueError, match="balanced"):
        classification_harness(n, l, test[:30], {}, cfg=FAST)


def test_eval_report_validation():
    conf = np.array([[90.0, 10.0], [5.0, 95.0]])
    r = EvalReport("GAN", 1.0, 0.5, 0.01, 0.9, 0.95, 0.94, 0.97, conf)
    assert r.case_id == "GAN"
    with pytest.raises(ValueError):
        EvalReport("GAN", np.nan, 0.5, 0.01, 0.9, 0.95, 0.94, 0.97, conf)
    with pytest.raises(ValueError):
        EvalReport("GAN", 1.0, 0.5, 0.01, 0.9, 0.95, 0.94, 0.97, np.array([[90.0, 9.0], [5.0, 95.0]]))


def test_evaluate_case_bundles_scores():
    real = toy(20, "N", 0)
    res = classification_harness(toy(60, "N", 5), toy(60, "L", 6), toy(20, "N", 7) + toy(20, "L", 8), {},
                                 cfg=FAST, seed=0)["balanced"]
    rep = evaluate_case("rl", real[:5], real, res, template_index=0)
    assert rep.avg_dtw >= 0 and rep.mmd >= 0 and rep.template_index == 0
    same = evaluate_case("rl", [real[0]], real[:1], res, template_index=0)
    assert same.avg_dtw == 0.0 and same.avg_frechet == 0.0 and same.mmd == 0.0
