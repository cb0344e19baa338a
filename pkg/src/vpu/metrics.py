"""Test-set metrics: accuracy, AUC (Mann-Whitney), confusion counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ClassifierModel, predict_label


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    auc: float
    n_test: int
    tp: int
    fp: int
    tn: int
    fn: int

    def as_text(self) -> str:
        lines = [f"{key}={getattr(self, key)}" for key in
                 ("accuracy", "auc", "n_test", "tp", "fp", "tn", "fn")]
        return "\n".join(lines)

    def as_csv_row(self) -> str:
        return (f"{self.accuracy:.17g},{self.auc:.17g},{self.n_test},"
                f"{self.tp},{self.fp},{self.tn},{self.fn}")

    CSV_HEADER = "accuracy,auc,n_test,tp,fp,tn,fn"


def _validate_test(test_x, test_y):
    x = np.asarray(test_x, dtype=np.float64)
    y = np.asarray(test_y)
    if x.shape[0] == 0:
        raise ValueError("test set empty")
    if x.shape[0] != y.shape[0]:
        raise ValueError("features and labels differ in length")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be +1/-1")
    return x, y.astype(np.int64)


def accuracy_from_scores(scores: np.ndarray, labels: np.ndarray,
                         threshold: float = 0.5) -> float:
    preds = np.where(np.asarray(scores) >= threshold, 1, -1)
    return float(np.mean(preds == np.asarray(labels)))


def average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged (midrank convention)."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average of positions i..j
        i = j + 1
    return ranks


def auc_from_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    """P(score+ > score-) + 0.5 P(tie), by rank sums in O(n log n)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = average_ranks(scores)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def accuracy(model: ClassifierModel, test_x, test_y) -> float:
    x, y = _validate_test(test_x, test_y)
    return accuracy_from_scores(model.predict_proba(x), y)


def auc(model: ClassifierModel, test_x, test_y) -> float:
    x, y = _validate_test(test_x, test_y)
    return auc_from_scores(model.predict_proba(x), y)


def report(model: ClassifierModel, test_x, test_y) -> MetricsReport:
    x, y = _validate_test(test_x, test_y)
    scores = model.predict_proba(x)
    preds = np.array([predict_label(p) for p in scores])
    tp = int(np.sum((preds == 1) & (y == 1)))
    fp = int(np.sum((preds == 1) & (y == -1)))
    tn = int(np.sum((preds == -1) & (y == -1)))
    fn = int(np.sum((preds == -1) & (y == 1)))
    return MetricsReport(
        accuracy=(tp + tn) / y.size,
        auc=auc_from_scores(scores, y),
        n_test=int(y.size),
        tp=tp, fp=fp, tn=tn, fn=fn,
    )
