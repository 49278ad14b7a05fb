"""AUROC / FPR95 / AUPR against brute-force oracles and hand cases."""

import numpy as np
import pytest

from kvrep.errors import DegenerateInputError, DomainError
from kvrep.metrics import ScoredSet, aupr, auroc, fpr_at_95_tpr, roc_points

import oracles


def scored(scores, labels):
    return ScoredSet(np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=bool))


def random_set(rng, n=30):
    # half the scores land on a coarse grid so tie handling is always exercised
    grid = rng.integers(0, 6, size=n).astype(np.float64)
    fine = rng.standard_normal(n)
    scores = np.where(rng.random(n) < 0.5, grid, fine)
    labels = rng.random(n) < rng.uniform(0.25, 0.75)
    if labels.all() or not labels.any():
        labels[0] = True
        labels[1] = False
    return scored(scores, labels)


def test_auroc_matches_pairwise_oracle_exactly():
    rng = np.random.default_rng(100)
    for _ in range(50):
        s = random_set(rng)
        assert auroc(s) == oracles.auroc_pairwise(s.scores, s.labels)


def test_fpr95_matches_exhaustive_sweep_exactly():
    rng = np.random.default_rng(101)
    for _ in range(50):
        s = random_set(rng)
        assert fpr_at_95_tpr(s) == oracles.fpr95_sweep(s.scores, s.labels)


def test_aupr_matches_exhaustive_sweep_exactly():
    rng = np.random.default_rng(102)
    for _ in range(50):
        s = random_set(rng)
        assert aupr(s) == pytest.approx(oracles.aupr_sweep(s.scores, s.labels), abs=1e-12)


def test_perfect_separation():
    s = scored([3.0, 2.5, 1.0, 0.5], [True, True, False, False])
    assert auroc(s) == 1.0
    assert fpr_at_95_tpr(s) == 0.0
    assert aupr(s) == 1.0


def test_reversed_separation():
    s = scored([0.5, 1.0, 2.5, 3.0], [True, True, False, False])
    assert auroc(s) == 0.0
    assert fpr_at_95_tpr(s) == 1.0


def test_all_tied_scores():
    s = scored([1.0] * 6, [True, False, True, False, True, False])
    assert auroc(s) == 0.5
    assert fpr_at_95_tpr(s) == 1.0  # the single threshold admits everything
    assert aupr(s) == 0.5


def test_auroc_complement_identity_is_exact():
    rng = np.random.default_rng(103)
    for _ in range(50):
        s = random_set(rng)
        flipped = scored(-s.scores, s.labels)
        assert auroc(s) + auroc(flipped) == 1.0


def test_fpr95_hand_case_with_ties():
    # threshold sweep: at score 2 TPR=2/3; at score 1 TPR=1 with one FP admitted
    s = scored([2.0, 2.0, 1.0, 1.0, 0.0], [True, True, True, False, False])
    assert fpr_at_95_tpr(s) == 0.5
    assert auroc(s) == oracles.auroc_pairwise(s.scores, s.labels)


def test_aupr_hand_case():
    # descending sweep: (tp=1, fp=0) then (tp=1, fp=1) then (tp=2, fp=1)
    s = scored([3.0, 2.0, 1.0], [True, False, True])
    assert aupr(s) == pytest.approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0))


def test_roc_points_are_anchored_and_monotone():
    rng = np.random.default_rng(104)
    s = random_set(rng)
    fpr, tpr = roc_points(s)
    assert fpr[0] == 0.0 and tpr[0] == 0.0
    assert fpr[-1] == 1.0 and tpr[-1] == 1.0
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


def test_degenerate_and_malformed_inputs():
    with pytest.raises(DegenerateInputError):
        auroc(scored([1.0, 2.0], [True, True]))
    with pytest.raises(DegenerateInputError):
        fpr_at_95_tpr(scored([1.0, 2.0], [False, False]))
    with pytest.raises(DomainError):
        ScoredSet(np.array([[1.0]]), np.array([[True]]))
    with pytest.raises(DomainError):
        ScoredSet(np.array([np.inf]), np.array([True]))
    with pytest.raises(DomainError):
        ScoredSet(np.array([1.0, 2.0]), np.array([True]))
