import math
from fractions import Fraction

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from msrc.evaluation import (
    ConfusionMatrix,
    EvaluationError,
    average,
    confusion,
    evaluate,
    kfold_split,
    metrics,
    roc_auc,
)


def pairwise_auc(scores, labels):
    """Brute force P(pos > neg) + 0.5 P(tie) over all pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def hand_metrics(tp, fn, fp, tn):
    n = tp + fn + fp + tn
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    return (tp + tn) / n, p, r, f1, fpr


# confusion


def test_confusion_examples():
    assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == ConfusionMatrix(1, 1, 1, 1)
    cm = confusion([1, 0, 1, 0, 0], [1, 0, 1, 0, 0])
    assert cm.fn == 0 and cm.fp == 0
    assert confusion([], []) == ConfusionMatrix(0, 0, 0, 0)
    with pytest.raises(EvaluationError, match="length mismatch"):
        confusion([1, 0], [1])
    with pytest.raises(EvaluationError, match="binary"):
        confusion([2, 0], [1, 0])


def test_accuracy_recomputed_from_arrays():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 60))
        y, p = rng.integers(0, 2, n), rng.integers(0, 2, n)
        cm = confusion(y, p)
        assert cm.total == n
        assert metrics(cm)["accuracy"] == (cm.tp + cm.tn) / n
        assert np.mean(y == p) == pytest.approx(metrics(cm)["accuracy"], abs=1e-15)


# metrics


def test_metrics_worked_example():
    m = metrics(ConfusionMatrix(tp=5, fn=0, fp=5, tn=90))
    assert m["accuracy"] == 0.95
    assert m["precision"] == 0.5
    assert m["recall"] == 1.0
    assert m["f1"] == pytest.approx(2 / 3, abs=1e-15)
    assert m["fpr"] == pytest.approx(5 / 95, abs=1e-15)
    assert m["flags"] == ()


def test_metrics_degenerate():
    m = metrics(ConfusionMatrix(tp=0, fn=4, fp=0, tn=6))
    assert m["precision"] == 0 and "precision_undefined" in m["flags"]
    assert m["recall"] == 0
    m = metrics(ConfusionMatrix(tp=0, fn=0, fp=0, tn=6))
    assert m["recall"] == 0 and "recall_undefined" in m["flags"]
    m = metrics(ConfusionMatrix(tp=3, fn=0, fp=0, tn=7))
    assert m["accuracy"] == 1 and m["f1"] == 1
    with pytest.raises(EvaluationError, match="empty"):
        metrics(ConfusionMatrix())


def test_metrics_random_matrices_match_hand_formulas():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        tp, fn, fp, tn = (int(v) for v in rng.integers(0, 50, 4))
        if tp + fn + fp + tn == 0:
            continue
        m = metrics(ConfusionMatrix(tp, fn, fp, tn))
        assert (m["accuracy"], m["precision"], m["recall"], m["f1"], m["fpr"]) == hand_metrics(tp, fn, fp, tn)
        for key in ("accuracy", "precision", "recall", "f1", "fpr"):
            assert 0 <= m[key] <= 1
        if m["precision"] + m["recall"] > 0:
            p, r = Fraction(m["precision"]), Fraction(m["recall"])
            assert abs(m["f1"] - float(2 * p * r / (p + r))) < 1e-15


# ROC / AUC


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0])[1] == 1.0
    assert roc_auc([0.4] * 6, [1, 0, 1, 0, 0, 1])[1] == 0.5
    assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0])[1] == 0.75


def test_auc_single_class_errors():
    with pytest.raises(EvaluationError, match="positive and one negative"):
        roc_auc([0.1, 0.2], [1, 1])


def test_roc_points_shape():
    rng = np.random.default_rng(2)
    s, y = rng.random(50).round(1), rng.integers(0, 2, 50)
    y[:2] = [0, 1]
    pts, _ = roc_auc(s, y)
    assert tuple(pts[0, :2]) == (0.0, 0.0) and tuple(pts[-1, :2]) == (1.0, 1.0)
    assert np.all(np.diff(pts[:, 0]) >= 0) and np.all(np.diff(pts[:, 1]) >= 0)
    assert np.isinf(pts[0, 2]) and np.all(np.diff(pts[1:, 2]) < 0)


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 1000:
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            continue
        # coarse rounding on half the instances forces many ties
        s = rng.random(n)
        if checked % 2:
            s = s.round(1)
        _, auc = roc_auc(s, y)
        assert abs(auc - pairwise_auc(s, y)) < 1e-9
        checked += 1


def test_auc_agrees_with_sklearn():
    rng = np.random.default_rng(4)
    for _ in range(100):
        y = rng.integers(0, 2, 80)
        y[:2] = [0, 1]
        s = rng.normal(size=80).round(1)
        assert roc_auc(s, y)[1] == pytest.approx(roc_auc_score(y, s), abs=1e-12)


def test_evaluate_report():
    r = evaluate([0.9, 0.6, 0.4, 0.1], [1, 0, 1, 0], threshold=0.5)
    assert r.confusion == ConfusionMatrix(1, 1, 1, 1)
    assert r.accuracy == 0.5 and r.auc == 0.75 and r.n == 4
    assert set(r.row()) == {"accuracy", "precision", "recall", "f1", "fpr", "auc"}
    r = evaluate([0.5], [1])
    assert r.accuracy == 1.0  # score >= threshold is an anomaly
    assert math.isnan(r.auc) and "auc_undefined" in r.flags


# k-fold


def test_kfold_hundred_windows():
    ids = np.repeat(np.arange(100), 8)
    folds = kfold_split(800, ids, 10, seed=0)
    assert [len(f.test_windows) for f in folds] == [10] * 10
    allw = np.concatenate([f.test_windows for f in folds])
    assert sorted(allw) == list(range(100))
    for f in folds:
        assert not set(f.test_windows) & set(f.train_windows)
        assert len(f.test_records) + len(f.train_records) == 800


@pytest.mark.parametrize("n_windows,k", [(23, 10), (11, 3), (7, 2), (10, 10)])
def test_kfold_balanced_and_partition(n_windows, k):
    ids = np.r_[np.repeat(np.arange(n_windows), 4), [-1, -1]]
    folds = kfold_split(len(ids), ids, k, seed=1)
    sizes = [len(f.test_windows) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    recs = np.concatenate([f.test_records for f in folds])
    assert sorted(recs) == list(range(4 * n_windows))  # each windowed record tested exactly once


def test_kfold_deterministic_and_seeded():
    ids = np.repeat(np.arange(30), 5)
    a = kfold_split(150, ids, 5, seed=3)
    b = kfold_split(150, ids, 5, seed=3)
    c = kfold_split(150, ids, 5, seed=4)
    assert all(np.array_equal(x.test_windows, y.test_windows) for x, y in zip(a, b))
    assert any(not np.array_equal(x.test_windows, y.test_windows) for x, y in zip(a, c))


def test_kfold_stratifies_anomaly_fraction():
    rng = np.random.default_rng(5)
    ids = np.repeat(np.arange(40), 10)
    anomalous = rng.permutation(40)[:12]
    labels = np.isin(ids, anomalous).astype(int)
    folds = kfold_split(400, ids, 4, seed=0, labels=labels)
    counts = [int(np.isin(f.test_windows, anomalous).sum()) for f in folds]
    assert counts == [3, 3, 3, 3]


def test_kfold_errors():
    ids = np.repeat(np.arange(3), 2)
    with pytest.raises(EvaluationError, match="only 3 windows"):
        kfold_split(6, ids, 4)
    with pytest.raises(EvaluationError):
        kfold_split(6, ids, 1)
    with pytest.raises(EvaluationError):
        kfold_split(5, ids, 2)


def test_average():
    vals = [0.1, 0.25, 0.7]
    assert abs(average(vals) - sum(vals) / 3) < 1e-12
    assert math.isnan(average([]))
