# src/metrics/metrics.py

from typing import NamedTuple, Tuple

import numpy as np
from scipy.stats import rankdata

from src.common.errors import ContractViolation, MetricUndefinedError
from src.core.ops import BCE_EPSILON, bce_loss, check_binary_labels


class ScoredSet(NamedTuple):
    scores: np.ndarray
    labels: np.ndarray


def _as_scored_set(scores, labels) -> Tuple[np.ndarray, np.ndarray, int, int]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.shape != labels.shape:
        raise ContractViolation(f"{scores.size} scores but {labels.size} labels")
    check_binary_labels(labels)
    positives = int(labels.sum())
    negatives = labels.size - positives
    if positives == 0 or negatives == 0:
        raise MetricUndefinedError(
            f"AUC needs both classes, got {positives} positive and {negatives} negative labels"
        )
    return scores, labels, positives, negatives


def auc(scores, labels) -> float:
    """
    Mann-Whitney AUC: (sum of positive ranks - P(P+1)/2) / (P * N), with tied
    scores sharing their mean rank, so a tie counts as half a correct pair.
    """
    scores, labels, positives, negatives = _as_scored_set(scores, labels)
    ranks = rankdata(scores, method="average")
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - positives * (positives + 1) / 2.0) / (positives * negatives))


def auc_bruteforce(scores, labels) -> float:
    """Pairwise AUC over all positive/negative pairs. Quadratic; for tests."""
    scores, labels, positives, negatives = _as_scored_set(scores, labels)
    pos = scores[labels == 1][:, None]
    neg = scores[labels == 0][None, :]
    wins = (pos > neg).sum() + 0.5 * (pos == neg).sum()
    return float(wins / (positives * negatives))


def logloss(scores, labels, eps: float = BCE_EPSILON) -> float:
    """Clamped mean negative log-likelihood; the same code path as the training loss."""
    loss, _ = bce_loss(np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=np.float64), eps)
    return loss


def evaluate_scores(scores, labels) -> Tuple[float, float]:
    return auc(scores, labels), logloss(scores, labels)
