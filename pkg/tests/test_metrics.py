import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gravnorm.errors import ContractError, ParameterError
from gravnorm.metrics import (accuracy, metrics_report, rejection_at_efficiency,
                              roc_auc, threshold_at_efficiency)


def pairwise_auc(scores, labels):
    """O(N^2) oracle: P(sig > bkg) + 0.5 P(tie) over all pairs."""
    sig = [s for s, l in zip(scores, labels) if l == 1]
    bkg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for s in sig:
        for b in bkg:
            total += 1.0 if s > b else (0.5 if s == b else 0.0)
    return total / (len(sig) * len(bkg))


def sweep_rejection(scores, labels, eff):
    """Exhaustive threshold sweep over every unique score value."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    sig, bkg = scores[labels == 1], scores[labels == 0]
    best_thr = None
    for thr in np.unique(scores):
        if np.mean(sig >= thr) >= eff and (best_thr is None or thr > best_thr):
            best_thr = thr
    eps_b = np.mean(bkg >= best_thr)
    return float("inf") if eps_b == 0 else 1.0 / eps_b


class TestAccuracy:
    def test_perfect(self):
        assert accuracy([0.9, 0.1], [1, 0]) == 1.0

    def test_half(self):
        assert accuracy([0.9, 0.9], [1, 0]) == 0.5

    def test_matches_recount(self):
        rng = np.random.default_rng(0)
        scores = rng.random(1000)
        labels = rng.integers(0, 2, 1000)
        manual = sum(int((s >= 0.5) == (l == 1)) for s, l in zip(scores, labels))
        assert accuracy(scores, labels) == pytest.approx(manual / 1000)

    def test_threshold_limits(self):
        rng = np.random.default_rng(1)
        scores = rng.random(200)
        labels = rng.integers(0, 2, 200)
        assert accuracy(scores, labels, threshold=0.0) == np.mean(labels == 1)
        assert accuracy(scores, labels, threshold=1.0 + 1e-9) == np.mean(labels == 0)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            accuracy([], [])


class TestRocAuc:
    def test_perfectly_separated(self):
        assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(2)
        scores = np.round(rng.random(200), 2)  # rounding forces ties
        labels = rng.integers(0, 2, 200)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert roc_auc(scores, labels) == pytest.approx(
            pairwise_auc(scores, labels), abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ContractError):
            roc_auc([0.5, 0.6], [1, 1])

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(3)
        scores = rng.random(300)
        labels = rng.integers(0, 2, 300)
        labels[:2] = [0, 1]
        base = roc_auc(scores, labels)
        for f in (lambda s: s ** 3, lambda s: np.tanh(4 * s), lambda s: 2 * s + 7):
            assert roc_auc(f(scores), labels) == pytest.approx(base, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_pairwise_oracle_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 60))
        scores = np.round(rng.random(n), 1)
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        assert roc_auc(scores, labels) == pytest.approx(
            pairwise_auc(scores, labels), abs=1e-12)


class TestRejection:
    def test_no_background_passes(self):
        scores = [0.9, 0.8, 0.7, 0.6, 0.0, 0.0, 0.0]
        labels = [1, 1, 1, 1, 0, 0, 0]
        assert rejection_at_efficiency(scores, labels, 0.3) == float("inf")

    def test_hand_enumerated_case(self):
        scores = [0.9, 0.6, 0.3, 0.8, 0.4, 0.1]
        labels = [1, 1, 1, 0, 0, 0]
        assert threshold_at_efficiency(scores, labels, 1 / 3) == 0.9
        assert rejection_at_efficiency(scores, labels, 1 / 3) == float("inf")

    def test_matches_threshold_sweep(self):
        rng = np.random.default_rng(4)
        scores = np.round(rng.random(1000), 2)
        labels = rng.integers(0, 2, 1000)
        labels[:2] = [0, 1]
        assert rejection_at_efficiency(scores, labels, 0.3) == pytest.approx(
            sweep_rejection(scores, labels, 0.3))

    def test_monotone_in_efficiency(self):
        rng = np.random.default_rng(5)
        scores = rng.random(400)
        labels = rng.integers(0, 2, 400)
        labels[:2] = [0, 1]
        rejections = [rejection_at_efficiency(scores, labels, e)
                      for e in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(a >= b for a, b in zip(rejections, rejections[1:]))

    def test_bad_efficiency(self):
        with pytest.raises(ParameterError):
            rejection_at_efficiency([0.1, 0.9], [0, 1], 1.5)


def test_report_schema_and_json():
    rng = np.random.default_rng(6)
    scores = rng.random(100)
    labels = rng.integers(0, 2, 100)
    labels[:2] = [0, 1]
    report = metrics_report(scores, labels)
    assert set(report) == {"acc", "auc", "rej30", "n_signal", "n_background",
                           "threshold_at_30"}
    assert report["n_signal"] + report["n_background"] == 100
    # round-trips through json even when rejection is infinite
    again = json.loads(json.dumps(report))
    assert again["acc"] == report["acc"]
