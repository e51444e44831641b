import numpy as np
import pytest

from psl_osr import ValidationError
from psl_osr.metrics import (MetricsReport, ScoreSet, aupr, auroc, closed_set_accuracy, evaluate,
                             fpr_at_tpr, split_evaluate)

from oracles import brute_aupr, brute_fpr, mann_whitney


def _random_set(rng, n, ties=True):
    n_ood = int(rng.integers(1, n))
    u = rng.integers(0, 10, n).astype(float) if ties else rng.standard_normal(n)
    ood = np.zeros(n, dtype=bool)
    ood[rng.choice(n, n_ood, replace=False)] = True
    return u, ood


def test_perfect_and_inverted():
    s = ScoreSet([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert auroc(s) == 1.0 and aupr(s) == 1.0 and fpr_at_tpr(s) == 0.0
    assert auroc(ScoreSet([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1])) == 0.0


def test_all_tied_is_half():
    s = ScoreSet([0.5] * 6, [0, 0, 0, 1, 1, 1])
    assert auroc(s) == 0.5
    assert aupr(s) == 0.5
    assert fpr_at_tpr(s) == 1.0


def test_auroc_matches_mann_whitney(rng):
    for _ in range(100):
        n = int(rng.integers(2, 201))
        u, ood = _random_set(rng, n)
        assert auroc(ScoreSet(u, ood)) == pytest.approx(mann_whitney(u[~ood], u[ood]), abs=1e-12)


def test_aupr_fpr_match_brute_force(rng):
    for _ in range(200):
        n = int(rng.integers(2, 51))
        u, ood = _random_set(rng, n, ties=bool(rng.integers(2)))
        s = ScoreSet(u, ood)
        assert aupr(s) == pytest.approx(brute_aupr(list(u), list(ood)), abs=1e-12)
        assert fpr_at_tpr(s) == pytest.approx(brute_fpr(list(u), list(ood)), abs=1e-12)


def test_fpr_exact_boundary():
    # 20 OoD: 19 flagged gives TPR exactly 0.95
    u = np.r_[np.arange(20) + 10.0, [9.5, 0.0, 0.0, 0.0]]
    ood = np.r_[np.ones(20), np.zeros(4)]
    u[0] = 0.5  # one OoD below the InD 9.5
    # 19/20 OoD sit above every InD score: TPR = 0.95 is reached with no false positive
    assert fpr_at_tpr(ScoreSet(u, ood)) == 0.0
    # requiring all 20 forces the threshold below 9.5
    assert fpr_at_tpr(ScoreSet(u, ood), 1.0) == 0.25


def test_needs_both_classes():
    with pytest.raises(ValidationError):
        auroc(ScoreSet([1, 2], [1, 1]))
    with pytest.raises(ValidationError):
        ScoreSet([1, 2], [1])


def test_closed_set_accuracy_ignores_ood():
    s = ScoreSet([0, 0, 1], [0, 0, 1], true_label=[1, 2, 9], predicted_label=[1, 0, 3])
    assert closed_set_accuracy(s) == 0.5


def test_split_k1_is_pooled_bit_for_bit(rng):
    u, ood = _random_set(rng, 120)
    s = ScoreSet(u, ood)
    a, b = split_evaluate(s, 1, seed=3), evaluate(s)
    assert (a.auroc, a.aupr, a.fpr95) == (b.auroc, b.aupr, b.fpr95)


def test_split_pools_full_ind_set(rng):
    u = rng.standard_normal(50)
    ood = np.r_[np.zeros(10), np.ones(40)].astype(bool)
    rep = split_evaluate(ScoreSet(u, ood), 4, seed=0)
    assert rep.splits == 4 and len(rep.per_split) == 4
    assert rep.auroc == pytest.approx(np.mean([r["auroc"] for r in rep.per_split]))
    with pytest.raises(ValidationError):
        split_evaluate(ScoreSet(u, ood), 41)


def test_split_is_deterministic(rng):
    u, ood = _random_set(rng, 100, ties=False)
    s = ScoreSet(u, ood)
    assert split_evaluate(s, 5, seed=9) == split_evaluate(s, 5, seed=9)


def test_report_round_trip():
    rep = MetricsReport(0.9, 0.8, 0.1, 1.0, "all_thresholds", 2,
                        [{"split": 0, "auroc": 0.9, "aupr": 0.8, "fpr95": 0.1}], None)
    assert MetricsReport.from_dict(rep.to_dict()) == rep
