"""Classification metrics: accuracy, ROC AUC, rejection at fixed efficiency.

A scored set is a pair of equal-length arrays (scores in [0,1], labels in
{0,1}); label 1 is signal.  AUC uses midranks, so it equals the pairwise
P(score_sig > score_bkg) + 0.5 P(tie).  The working-point threshold is
stepwise (no interpolation): the smallest number of accepted signal events
whose fraction reaches the target efficiency fixes the threshold.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ParameterError


def _check(scores, labels, need_both_classes=False):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError(f"scores {scores.shape} and labels {labels.shape} "
                            "must be equal-length 1-D arrays")
    if len(scores) == 0:
        raise ContractError("empty scored set")
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be 0 or 1")
    if need_both_classes and (labels.min() == labels.max()):
        raise ContractError("need at least one signal and one background entry")
    return scores, labels


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores, labels = _check(scores, labels)
    return float(np.mean((scores >= threshold) == (labels == 1)))


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    boundaries = np.flatnonzero(np.diff(sx) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(x)]))
    mids = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x))
    ranks[order] = np.repeat(mids, ends - starts)
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(signal outscores background)."""
    scores, labels = _check(scores, labels, need_both_classes=True)
    ranks = _midranks(scores)
    n_sig = int(np.sum(labels == 1))
    n_bkg = len(labels) - n_sig
    rank_sum = float(np.sum(ranks[labels == 1]))
    return (rank_sum - n_sig * (n_sig + 1) / 2.0) / (n_sig * n_bkg)


def threshold_at_efficiency(scores, labels, eff: float) -> float:
    """Highest threshold whose signal efficiency reaches ``eff`` (stepwise)."""
    scores, labels = _check(scores, labels, need_both_classes=True)
    if not 0.0 < eff < 1.0:
        raise ParameterError(f"efficiency must be in (0, 1), got {eff}")
    sig = np.sort(scores[labels == 1])[::-1]
    m = max(int(np.ceil(eff * len(sig))), 1)
    return float(sig[m - 1])


def rejection_at_efficiency(scores, labels, eff: float = 0.30) -> float:
    """1 / false-positive rate at the stepwise working point.

    Returns +inf when no background event passes the threshold.
    """
    scores, labels = _check(scores, labels, need_both_classes=True)
    thr = threshold_at_efficiency(scores, labels, eff)
    eps_b = float(np.mean(scores[labels == 0] >= thr))
    return float("inf") if eps_b == 0.0 else 1.0 / eps_b


def metrics_report(scores, labels, eff: float = 0.30) -> dict:
    """The JSON-ready report with the Table-style quantities."""
    scores, labels = _check(scores, labels, need_both_classes=True)
    return {
        "acc": accuracy(scores, labels),
        "auc": roc_auc(scores, labels),
        "rej30": rejection_at_efficiency(scores, labels, eff),
        "n_signal": int(np.sum(labels == 1)),
        "n_background": int(np.sum(labels == 0)),
        "threshold_at_30": threshold_at_efficiency(scores, labels, eff),
    }
