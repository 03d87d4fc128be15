"""Confusion-matrix metrics, ROC/AUC and window-level stratified k-fold splits.

Positive class = anomaly (label 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


def _binary(name: str, values) -> np.ndarray:
    arr = np.asarray(values).astype(int).ravel()
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise EvaluationError(f"{name} must be binary (0/1)")
    return arr


def confusion(labels, predictions) -> ConfusionMatrix:
    y = _binary("labels", labels)
    p = _binary("predictions", predictions)
    if y.shape != p.shape:
        raise EvaluationError(f"length mismatch: {y.size} labels vs {p.size} predictions")
    return ConfusionMatrix(
        tp=int(np.sum((y == 1) & (p == 1))),
        fn=int(np.sum((y == 1) & (p == 0))),
        fp=int(np.sum((y == 0) & (p == 1))),
        tn=int(np.sum((y == 0) & (p == 0))),
    )


def _ratio(num: float, den: float, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix) -> dict:
    """Accuracy, precision, recall, F1 and FPR.

    A zero denominator yields 0 and adds a ``"<metric>_undefined"`` entry to
    ``flags``.
    """
    if cm.total == 0:
        raise EvaluationError("cannot compute metrics of an empty confusion matrix")
    flags: list[str] = []
    accuracy = (cm.tp + cm.tn) / cm.total
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision_undefined", flags)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall_undefined", flags)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1_undefined", flags)
    fpr = _ratio(cm.fp, cm.fp + cm.tn, "fpr_undefined", flags)
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1,
            "fpr": fpr, "flags": tuple(flags)}


def roc_auc(scores, labels):
    """ROC points and trapezoidal AUC.

    Thresholds are ``+inf`` followed by every distinct score in decreasing
    order; a record is called positive when ``score >= threshold``.  Returns
    ``(points, auc)`` with ``points`` an ``(m, 3)`` array of
    ``(fpr, tpr, threshold)`` running from (0, 0) to (1, 1).  Tied scores move
    TPR and FPR together, which gives them half credit in the area.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = _binary("labels", labels)
    if s.shape != y.shape:
        raise EvaluationError(f"length mismatch: {s.size} scores vs {y.size} labels")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC/AUC needs at least one positive and one negative label")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return np.column_stack([fpr, tpr, thresholds]), auc


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    fpr: float
    auc: float
    roc_points: np.ndarray
    confusion: ConfusionMatrix
    flags: tuple[str, ...] = ()
    n: int = 0

    def row(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "fpr": self.fpr, "auc": self.auc}


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Full report for ``scores`` thresholded at ``score >= threshold``.

    When only one class is present the AUC is undefined; it is reported as
    NaN with an ``auc_undefined`` flag and the ROC reduces to its endpoints.
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = _binary("labels", labels)
    cm = confusion(y, (s >= threshold).astype(int))
    m = metrics(cm)
    flags = list(m["flags"])
    if 0 < y.sum() < y.size:
        points, auc = roc_auc(s, y)
    else:
        points, auc = np.array([[0.0, 0.0, np.inf], [1.0, 1.0, -np.inf]]), float("nan")
        flags.append("auc_undefined")
    return MetricsReport(m["accuracy"], m["precision"], m["recall"], m["f1"], m["fpr"], auc,
                         points, cm, tuple(flags), cm.total)


# -- cross-validation splits ---------------------------------------------------

@dataclass
class Fold:
    index: int
    test_windows: np.ndarray
    train_windows: np.ndarray
    test_records: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    train_records: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def kfold_split(n_records: int, window_ids, k: int = 10, seed: int = 0, labels=None) -> list[Fold]:
    """Partition windows (not records) into ``k`` folds.

    ``window_ids[i]`` is the window holding record ``i`` (``-1`` for records
    outside every window).  Windows are ordered by anomaly fraction, with a
    seeded random tie-break, and dealt round-robin, so fold sizes differ by at
    most one and the anomaly fraction is spread evenly.
    """
    ids = np.asarray(window_ids, dtype=int)
    if ids.shape != (n_records,):
        raise EvaluationError(f"window_ids must have length {n_records}, got {ids.shape}")
    if k < 2:
        raise EvaluationError(f"k must be >= 2, got {k}")
    windows = np.unique(ids[ids >= 0])
    if k > len(windows):
        raise EvaluationError(f"k={k} folds requested but only {len(windows)} windows available")
    rng = np.random.default_rng(seed)
    if labels is not None:
        y = np.asarray(labels, dtype=float)
        frac = np.array([y[ids == w].mean() for w in windows])
    else:
        frac = np.zeros(len(windows))
    tiebreak = rng.permutation(len(windows))
    ranked = windows[np.lexsort((tiebreak, frac))]
    folds = []
    for f in range(k):
        test_w = np.sort(ranked[f::k])
        train_w = np.setdiff1d(windows, test_w)
        folds.append(Fold(f, test_w, train_w,
                          np.flatnonzero(np.isin(ids, test_w)), np.flatnonzero(np.isin(ids, train_w))))
    return folds


def average(values) -> float:
    vals = np.asarray(list(values), dtype=float)
    return float(np.mean(vals)) if vals.size else float("nan")
