import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cltrsim.letor import QueryGroup
from cltrsim.metrics import (
    MetricUndefinedError,
    arp,
    evaluate_rankings,
    inc_ninc,
    ndcg_at_k,
)
from oracles import brute_force_ndcg

labels_st = st.lists(st.integers(0, 4), min_size=1, max_size=8)


class TestNdcg:
    def test_ideal_ordering(self):
        labels = [1, 4, 0, 2]
        assert ndcg_at_k(np.argsort(labels)[::-1], labels, 3) == 1.0

    def test_worst_first_pair(self):
        value = ndcg_at_k([0, 1], [0, 4], 2)
        assert value == pytest.approx((15 / math.log2(3)) / 15)
        assert value == pytest.approx(0.6309, abs=1e-4)

    def test_all_irrelevant(self):
        assert ndcg_at_k([0, 1, 2], [0, 0, 0], 3) == 0.0

    def test_cutoff_beyond_length(self):
        assert ndcg_at_k([1, 0], [0, 2], 10) == 1.0
        assert ndcg_at_k([0, 1], [0, 2], 10) == pytest.approx(1 / math.log2(3))

    @pytest.mark.parametrize("k", [0, -1])
    def test_bad_cutoff(self, k):
        with pytest.raises(ValueError):
            ndcg_at_k([0], [1], k)

    @settings(max_examples=200, deadline=None)
    @given(labels_st, st.integers(1, 10), st.randoms(use_true_random=False))
    def test_matches_brute_force(self, labels, k, rnd):
        ranking = list(range(len(labels)))
        rnd.shuffle(ranking)
        assert abs(ndcg_at_k(ranking, labels, k) - brute_force_ndcg(ranking, labels, k)) <= 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=4, max_size=8), st.randoms(use_true_random=False))
    def test_invariant_below_cutoff(self, labels, rnd):
        k = 3
        ranking = list(range(len(labels)))
        rnd.shuffle(ranking)
        tail = ranking[k:]
        rnd.shuffle(tail)
        assert ndcg_at_k(ranking, labels, k) == ndcg_at_k(ranking[:k] + tail, labels, k)

    @settings(max_examples=100, deadline=None)
    @given(labels_st, st.integers(1, 10))
    def test_unit_interval(self, labels, k):
        v = ndcg_at_k(list(range(len(labels)))[::-1], labels, k)
        assert 0.0 <= v <= 1.0 + 1e-15


class TestArp:
    def test_single_at_top(self):
        assert arp([0, 1, 2], [3, 0, 0]) == 1.0

    def test_mean_rank(self):
        assert arp([0, 1, 2], [1, 0, 2]) == 2.0

    @pytest.mark.parametrize("n", [2, 5, 9])
    def test_reversal(self, n):
        labels = [1] + [0] * (n - 1)
        assert arp(list(range(n))[::-1], labels) == n

    def test_no_relevant(self):
        assert math.isnan(arp([0, 1], [0, 0]))


class TestIncrease:
    def test_skyline_is_one(self):
        assert inc_ninc(0.8123, 0.61, 0.8123)[1] == 1.0

    def test_production_is_zero(self):
        assert inc_ninc(0.61, 0.61, 0.8123) == (0.0, 0.0)

    def test_example(self):
        inc, ninc = inc_ninc(0.75, 0.70, 0.80)
        assert inc == pytest.approx(0.0714, abs=1e-4)
        assert ninc == pytest.approx(0.5)

    @pytest.mark.parametrize("pr, sky", [(0.0, 0.5), (0.4, 0.4)])
    def test_undefined(self, pr, sky):
        with pytest.raises(MetricUndefinedError):
            inc_ninc(0.3, pr, sky)

    @settings(max_examples=200)
    @given(
        st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.01, 1.0), st.floats(0.01, 1.0),
    )
    def test_strictly_increasing(self, m1, m2, pr, sky):
        assume(sky > pr + 1e-6 and abs(m1 - m2) > 1e-9)
        lo, hi = sorted((m1, m2))
        assert inc_ninc(lo, pr, sky)[1] < inc_ninc(hi, pr, sky)[1]

    @settings(max_examples=200)
    @given(st.floats(0.0, 1.0), st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.1, 10.0))
    def test_scale_invariant(self, m, pr, sky, c):
        assume(abs(sky - pr) > 1e-3)
        assert inc_ninc(c * m, c * pr, c * sky)[1] == pytest.approx(inc_ninc(m, pr, sky)[1], rel=1e-9, abs=1e-12)


def test_evaluate_rankings_averages_queries():
    groups = [
        QueryGroup("a", np.zeros((2, 1)), np.array([0, 4])),
        QueryGroup("b", np.zeros((2, 1)), np.array([4, 0])),
    ]
    report = evaluate_rankings("m", [np.array([1, 0]), np.array([1, 0])], groups)
    assert report.n_queries == 2
    assert report.ndcg_at_k[1] == 0.5
    assert report.arp == 1.5
    report.with_baselines(pr_ndcg5=report.ndcg_at_k[5], skyline_ndcg5=1.0)
    assert report.ninc == 0.0
