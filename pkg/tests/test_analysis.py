import math

import numpy as np
import pytest

from psl_osr import ValidationError
from psl_osr.analysis import (class_similarity_stats, covariance_matrix, per_class_uncertainty,
                              singular_spectrum, uncertainty_histogram)
from psl_osr.losses import PrototypeBank
from psl_osr.metrics import ScoreSet

from oracles import naive_cov, rand_unit


def test_covariance_simple_cases():
    np.testing.assert_array_equal(covariance_matrix([[1, 0], [-1, 0]]), [[1, 0], [0, 0]])
    np.testing.assert_array_equal(covariance_matrix([[2, 3]] * 4), np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        covariance_matrix([[1, 2]])


def test_covariance_matches_naive(rng):
    z = rng.standard_normal((100, 8))
    c = covariance_matrix(z)
    np.testing.assert_allclose(c, naive_cov(z.tolist()), atol=1e-12)
    np.testing.assert_array_equal(c, c.T)


def test_spectrum_simple_cases():
    np.testing.assert_allclose(singular_spectrum(np.diag([1.0, 4.0])).singular_values, [4, 1])
    rep = singular_spectrum(np.eye(3))
    np.testing.assert_allclose(rep.singular_values, [1, 1, 1])
    assert rep.dim == 3


def test_spectrum_floor_and_order():
    rep = singular_spectrum(np.diag([0.0, 2.0, 1.0]))
    assert list(rep.singular_values) == sorted(rep.singular_values, reverse=True)
    assert np.all(np.isfinite(rep.log_values))
    assert rep.log_values[-1] == pytest.approx(math.log(1e-300))
    assert [r["rank"] for r in rep.rows()] == [1, 2, 3]


def test_spectrum_rotation_invariant(rng):
    z = rng.standard_normal((60, 5))
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    a = singular_spectrum(covariance_matrix(z)).singular_values
    b = singular_spectrum(covariance_matrix(z @ q.T)).singular_values
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_spectrum_rejects_asymmetric():
    with pytest.raises(ValidationError):
        singular_spectrum([[1.0, 0.5], [0.0, 1.0]])


def test_stats_collapsed_class():
    bank = PrototypeBank(np.eye(2))
    z = np.array([[1.0, 0.0]] * 3)
    st = class_similarity_stats(z, [0, 0, 0], [0, 0, 0], bank, [0, 0, 0])
    g = st.ind[0]
    assert (g.sim_mean, g.sim_proto, g.variance) == (1.0, 1.0, 0.0)


def test_stats_orthogonal_pair():
    bank = PrototypeBank(np.eye(2))
    st = class_similarity_stats(np.eye(2), [0, 0], [0, 1], bank, [0, 0])
    assert st.ind[0].sim_mean == pytest.approx(math.sqrt(0.5), abs=1e-12)


def _naive_group(z, mean):
    m = mean / np.linalg.norm(mean)
    sims = [sum(a * b for a, b in zip(row, m)) for row in z]
    d = len(z[0])
    var = 0.0
    for j in range(d):
        col = [row[j] for row in z]
        mu = sum(col) / len(col)
        var += sum((v - mu) ** 2 for v in col) / len(col)
    return sum(sims) / len(sims), var / d


def test_stats_match_naive(rng):
    n, d = 3, 4
    bank = PrototypeBank(rand_unit(rng, n, d))
    z = rand_unit(rng, 60, d)
    labels = rng.integers(0, n, 60)
    ood = np.zeros(60, dtype=bool)
    ood[40:] = True
    labels[40:] = 7  # OoD labels are outside the InD range
    pred = rng.integers(0, n, 60)
    st = class_similarity_stats(z, labels, pred, bank, ood)
    for g in st.ind:
        zc = z[~ood & (labels == g.group)]
        sim, var = _naive_group(zc, zc.mean(axis=0))
        assert g.sim_mean == pytest.approx(sim, abs=1e-10)
        assert g.variance == pytest.approx(var, abs=1e-10)
        assert g.sim_proto == pytest.approx(np.mean(zc @ bank.prototypes[g.group]), abs=1e-10)
    for g in st.ood:
        zc = z[ood & (pred == g.group)]
        ind_mean = z[~ood & (labels == g.group)].mean(axis=0)
        sim, var = _naive_group(zc, ind_mean)
        assert g.sim_mean == pytest.approx(sim, abs=1e-10)
        if len(zc) >= 2:
            assert g.variance == pytest.approx(var, abs=1e-10)
    summ = st.summary()
    assert set(summ) >= {"ind_mean", "ind_variance", "ood_mean", "ood_variance"}
    assert -1 <= summ["ood_mean"] <= 1


def test_stats_flags_singleton_groups():
    bank = PrototypeBank(np.eye(2))
    z = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    st = class_similarity_stats(z, [0, 1, 1], [0, 1, 1], bank, [0, 0, 0])
    assert st.ind[0].variance is None
    assert st.flagged == [("ind", 0)]


def test_per_class_table():
    s = ScoreSet([1, 2, 3, 10], [0, 0, 0, 1], true_label=[4, 4, 4, 9])
    rows = per_class_uncertainty(s, classes=[4, 5, 9])
    assert [r["class"] for r in rows] == [4, 9]  # empty class 5 dropped
    assert rows[0]["mean"] == 2 and rows[0]["median"] == 2
    assert rows[0]["min"] == 1 and rows[0]["max"] == 3
    assert rows[1]["is_ood"] is True


def test_histogram_two_bins():
    h = uncertainty_histogram(ScoreSet([0.0, 1.0], [0, 1]), bins=2)
    assert list(h.ind_counts) == [1, 0] and list(h.ood_counts) == [0, 1]


def test_histogram_conserves_counts(rng):
    u = rng.standard_normal(137)
    ood = rng.random(137) < 0.3
    h = uncertainty_histogram(ScoreSet(u, ood), bins=20)
    assert len(list(h.rows())) == 20
    assert h.ind_counts.sum() == (~ood).sum() and h.ood_counts.sum() == ood.sum()


def test_histogram_degenerate_and_validation():
    h = uncertainty_histogram(ScoreSet([3.0] * 4, [0, 0, 1, 1]), bins=5)
    assert h.degenerate and h.ind_counts[0] == 2 and h.ood_counts[0] == 2
    with pytest.raises(ValidationError):
        uncertainty_histogram(ScoreSet([0, 1], [0, 1]), bins=1)
