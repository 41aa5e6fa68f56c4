"""Quality (DTW, discrete Frechet), distribution (linear MMD) and classification scores."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .classifier import ClassifierConfig, predict_proba, train_classifier


class MetricUndefinedError(ValueError):
    """A score is undefined for the given labels (e.g. only one class present)."""


def _as_1d(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError(f"{name}: empty input")
    return x


def dtw(a, b) -> float:
    """Accumulated |a_i - b_j| cost along the cheapest monotone warping path."""
    a, b = _as_1d(a, "dtw"), _as_1d(b, "dtw")
    cost = np.abs(a[:, None] - b[None, :]).tolist()
    n, m = len(a), len(b)
    prev = [np.inf] * (m + 1)
    prev[0] = 0.0
    for i in range(n):
        cur = [np.inf] * (m + 1)
        row = cost[i]
        for j in range(m):
            best = prev[j]
            if prev[j + 1] < best:
                best = prev[j + 1]
            if cur[j] < best:
                best = cur[j]
            cur[j + 1] = row[j] + best
        prev = cur
        prev[0] = np.inf
    return float(prev[m])


def frechet_discrete(a, b) -> float:
    """Discrete Frechet distance of two 1-D sequences with ground metric |a_i - b_j|."""
    a, b = _as_1d(a, "frechet"), _as_1d(b, "frechet")
    cost = np.abs(a[:, None] - b[None, :]).tolist()
    n, m = len(a), len(b)
    prev = [np.inf] * (m + 1)
    prev[0] = -np.inf
    for i in range(n):
        cur = [np.inf] * (m + 1)
        row = cost[i]
        for j in range(m):
            best = min(prev[j], prev[j + 1], cur[j])
            cur[j + 1] = max(row[j], best)
        prev = cur
        prev[0] = np.inf
    return float(prev[m])


METRICS = {"dtw": dtw, "frechet": frechet_discrete}


def avg_distance_to_template(beats: Sequence, template, metric: str = "dtw") -> float:
    if len(beats) == 0:
        raise ValueError("avg_distance_to_template: empty set")
    fn = METRICS[metric]
    return float(np.mean([fn(b, template) for b in beats]))


def mmd_linear(X, Y) -> float:
    """Biased linear-kernel MMD^2, i.e. the squared distance between sample means."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    X = X.reshape(len(X), -1)
    Y = Y.reshape(len(Y), -1)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("mmd_linear: empty sample set")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"mmd_linear: dimension mismatch {X.shape[1]} vs {Y.shape[1]}")
    # sorting each column first makes the means independent of sample order, bit for bit
    d = np.sort(X, axis=0).mean(axis=0) - np.sort(Y, axis=0).mean(axis=0)
    return float(d @ d)


# ---------------------------------------------------------------------------
# binary classification scores

@dataclass
class BinaryScores:
    precision: float | None
    recall: float | None
    confusion: np.ndarray  # rows: true negative/positive class, cols: predicted; percentages
    counts: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


def _check_labels(labels, scores):
    labels = np.asarray(labels).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if labels.shape != scores.shape:
        raise ValueError("labels and scores differ in length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    return labels.astype(int), scores


def binary_scores(labels, scores, threshold: float = 0.5) -> BinaryScores:
    labels, scores = _check_labels(labels, scores)
    pred = (scores >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    tn = int(np.sum((pred == 0) & (labels == 0)))
    flags = []
    if len(np.unique(labels)) < 2:
        flags.append("single_class_labels")
    precision = tp / (tp + fp) if tp + fp > 0 and not flags else None
    if precision is None and "single_class_labels" not in flags:
        flags.append("no_positive_predictions")
    recall = tp / (tp + fn) if tp + fn > 0 else None
    conf = np.zeros((2, 2))
    for r, row in enumerate(((tn, fp), (fn, tp))):
        total = sum(row)
        if total:
            conf[r] = 100.0 * np.array(row) / total
    return BinaryScores(precision, recall, conf, {"tp": tp, "fp": fp, "fn": fn, "tn": tn}, flags)


def _require_both(labels):
    if labels.min() == labels.max():
        raise MetricUndefinedError("both classes must be present")


def pr_curve(labels, scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(recall, precision, thresholds), one point per distinct score, highest first.

    The curve is prefixed with the (recall 0, precision 1) anchor.
    """
    labels, scores = _check_labels(labels, scores)
    _require_both(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / labels.sum()
    return np.r_[0.0, recall], np.r_[1.0, precision], s[last]


def pr_curve_auc(labels, scores) -> tuple[tuple[np.ndarray, np.ndarray], float]:
    recall, precision, _ = pr_curve(labels, scores)
    auc = float(np.sum(np.diff(recall) * (precision[1:] + precision[:-1]) / 2.0))
    return (recall, precision), auc


def average_precision(labels, scores) -> float:
    """Step-sum AP: sum over thresholds of (R_k - R_{k-1}) * P_k."""
    recall, precision, _ = pr_curve(labels, scores)
    return float(np.sum(np.diff(recall) * precision[1:]))


def roc_curve(labels, scores) -> tuple[np.ndarray, np.ndarray]:
    labels, scores = _check_labels(labels, scores)
    _require_both(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return np.r_[0.0, fp / (len(y) - y.sum())], np.r_[0.0, tp / y.sum()]


def roc_auc(labels, scores) -> float:
    """P(random positive outranks random negative), ties counting one half."""
    labels, scores = _check_labels(labels, scores)
    _require_both(labels)
    ranks = rankdata(scores)
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# authenticity harness
#
# Minority class N is cut down to the configured ratio and then topped back up
# with synthetic (or held-out real) N beats. Class L is the positive label, so
# an N-starved classifier over-predicts L and its precision falls.

NEGATIVE, POSITIVE = "N", "L"


@dataclass(frozen=True)
class HarnessConfig:
    train_per_class: int = 7000
    minority: int = 350
    test_per_class: int = 1000
    scale: float = 1.0
    threshold: float = 0.5
    classifier: ClassifierConfig = ClassifierConfig()

    def counts(self) -> tuple[int, int, int]:
        r = lambda n: max(int(np.floor(n * self.scale + 0.5)), 1)
        return r(self.train_per_class), r(self.minority), r(self.test_per_class)


@dataclass
class ScenarioResult:
    name: str
    precision: float | None
    avg_precision: float
    pr_auc: float
    roc_auc: float
    confusion: np.ndarray
    flags: list[str] = field(default_factory=list)
    pr_points: tuple = ()
    roc_points: tuple = ()


@dataclass
class EvalReport:
    case_id: str
    avg_dtw: float
    avg_frechet: float
    mmd: float
    precision: float | None
    avg_precision: float
    pr_auc: float
    roc_auc: float
    confusion: np.ndarray
    template_index: int = -1
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        conf = np.asarray(self.confusion, dtype=np.float64)
        scalars = [self.avg_dtw, self.avg_frechet, self.mmd, self.avg_precision, self.pr_auc, self.roc_auc]
        if not all(np.isfinite(scalars)) or not np.all(np.isfinite(conf)):
            raise ValueError(f"report {self.case_id}: non-finite metric")
        for row in conf:
            if row.sum() and abs(row.sum() - 100.0) > 1e-6:
                raise ValueError(f"report {self.case_id}: confusion row sums to {row.sum()}")
        self.confusion = conf


def _stack(beats) -> np.ndarray:
    return np.stack([np.asarray(getattr(b, "samples", b), dtype=np.float64) for b in beats])


def _score_scenario(name, x_tr, y_tr, x_te, y_te, cfg: HarnessConfig, seed: int) -> ScenarioResult:
    model = train_classifier(x_tr, y_tr, cfg.classifier, seed)
    p = predict_proba(model, x_te)
    bs = binary_scores(y_te, p, cfg.threshold)
    pr, auc = pr_curve_auc(y_te, p)
    return ScenarioResult(name, bs.precision, average_precision(y_te, p), auc, roc_auc(y_te, p),
                          bs.confusion, bs.flags, pr, roc_curve(y_te, p))


def classification_harness(real_train_n, real_train_l, real_test, synth_by_case: dict,
                           cfg: HarnessConfig = HarnessConfig(), seed: int = 0) -> dict[str, ScenarioResult]:
    """Train and score the four scenarios on one shared all-real test set.

    Keys: ``balanced``, ``imbalanced``, ``augmented:<case>`` per synthetic
    pool, and ``real_augmented`` (minority topped up with unused real N
    beats). Every scenario trains with the same seed.
    """
    n_train, n_min, n_test = cfg.counts()
    test_labels = [b.label for b in real_test]
    n_neg, n_pos = test_labels.count(NEGATIVE), test_labels.count(POSITIVE)
    if n_neg != n_pos or n_neg + n_pos != len(real_test):
        raise ValueError(f"test set must be balanced {NEGATIVE}/{POSITIVE}, got {n_neg}/{n_pos} of {len(real_test)}")
    if len(real_train_n) < n_train or len(real_train_l) < n_train:
        raise ValueError(f"need {n_train} real training beats per class, have "
                         f"{len(real_train_n)} {NEGATIVE} and {len(real_train_l)} {POSITIVE}")
    rng = np.random.default_rng(seed)
    xn = _stack(real_train_n)[rng.permutation(len(real_train_n))]
    xl = _stack(real_train_l)[rng.permutation(len(real_train_l))][:n_train]
    x_te = _stack(real_test)
    y_te = (np.array(test_labels) == POSITIVE).astype(int)
    minority = xn[:n_min]
    gap = n_train - n_min

    def run(name, negatives):
        x = np.concatenate([negatives, xl])
        y = np.r_[np.zeros(len(negatives)), np.ones(len(xl))]
        return _score_scenario(name, x, y, x_te, y_te, cfg, seed)

    results = {"balanced": run("balanced", xn[:n_train]), "imbalanced": run("imbalanced", minority)}
    for case_id in sorted(synth_by_case):
        pool = synth_by_case[case_id]
        if len(pool) < gap:
            raise ValueError(f"case {case_id}: synthetic pool has {len(pool)} beats, augmentation needs {gap} "
                             f"(short by {gap - len(pool)})")
        results[f"augmented:{case_id}"] = run(f"augmented:{case_id}", np.concatenate([minority, _stack(pool)[:gap]]))
    spare = xn[n_min:]
    if len(spare) >= gap:
        results["real_augmented"] = run("real_augmented", np.concatenate([minority, spare[:gap]]))
    return results


def evaluate_case(case_id: str, synth, real_reference, scenario: ScenarioResult, template_index: int,
                  flags: Sequence[str] = ()) -> EvalReport:
    """Bundle quality, distribution and authenticity scores for one generator case."""
    synth_arr, ref = _stack(synth), _stack(real_reference)
    template = ref[template_index]
    return EvalReport(
        case_id=case_id,
        avg_dtw=avg_distance_to_template(synth_arr, template, "dtw"),
        avg_frechet=avg_distance_to_template(synth_arr, template, "frechet"),
        mmd=mmd_linear(synth_arr, ref),
        precision=scenario.precision,
        avg_precision=scenario.avg_precision,
        pr_auc=scenario.pr_auc,
        roc_auc=scenario.roc_auc,
        confusion=scenario.confusion,
        template_index=int(template_index),
        flags=list(scenario.flags) + list(flags),
    )
