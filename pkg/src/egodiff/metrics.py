"""Outlier-ranking metrics: ROC-AUC, average precision, Recall@k."""
import numpy as np
from scipy.stats import rankdata

from .errors import ContractError


def _prep(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise ContractError("scores and labels must have equal length")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be binary")
    return scores, labels


def roc_auc(scores, labels):
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores, labels = _prep(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("ROC-AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(scores, labels):
    """``sum_n (R_n - R_{n-1}) P_n`` over descending distinct score thresholds."""
    scores, labels = _prep(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ContractError("average precision needs at least one positive label")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of each run of tied scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp_at = tp[ends]
    precision = tp_at / (ends + 1)
    recall = tp_at / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def recall_at_k(scores, labels, k=None):
    """Fraction of positives among the ``k`` top scores (default ``k`` = #positives).

    Ties are broken by ascending index.
    """
    scores, labels = _prep(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ContractError("Recall@k needs at least one positive label")
    k = n_pos if k is None else int(k)
    if not 1 <= k <= scores.size:
        raise ContractError(f"k={k} outside [1, {scores.size}]")
    order = np.lexsort((np.arange(scores.size), -scores))
    return float(labels[order[:k]].sum() / n_pos)


def evaluate(scores, labels):
    return {
        "roc_auc": roc_auc(scores, labels),
        "average_precision": average_precision(scores, labels),
        "recall_at_k": recall_at_k(scores, labels),
    }
