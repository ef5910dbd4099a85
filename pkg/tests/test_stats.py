import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import exact_two_sided_p

from consistent_vote.stats import VoteTally, binom_p_value, log_binom_pmf_half, p_value_table, tally, top_two


class TestTally:
    @pytest.mark.parametrize(
        "labels, k, counts",
        [([0, 0, 1], 2, (2, 1)), ([1, 1, 1, 1], 3, (0, 4, 0)), ([2, 0, 2, 1, 2], 3, (1, 1, 3))],
    )
    def test_counts(self, labels, k, counts):
        t = tally(labels, k)
        assert t.counts == counts
        assert t.num_models == len(labels)

    def test_out_of_range_label_is_named(self):
        with pytest.raises(ValueError, match="label 3"):
            tally([0, 3], 3)
        with pytest.raises(ValueError, match="label -1"):
            tally([-1], 2)

    def test_rejects_bad_tallies(self):
        with pytest.raises(ValueError):
            VoteTally((3,), 3)
        with pytest.raises(ValueError):
            VoteTally((1, 1), 3)
        with pytest.raises(ValueError):
            tally([], 2)

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=60))
    def test_argmax_is_lowest_mode(self, labels):
        c = Counter(labels)
        best = max(c.values())
        assert tally(labels, 5).argmax() == min(k for k, v in c.items() if v == best)


class TestTopTwo:
    @pytest.mark.parametrize(
        "counts, expected",
        [((2, 7, 1), (1, 7, 0, 2)), ((5, 5), (0, 5, 1, 5)), ((6, 3, 1), (0, 6, 1, 3))],
    )
    def test_examples(self, counts, expected):
        assert top_two(VoteTally(counts, sum(counts))) == expected


class TestBinomPValue:
    @pytest.mark.parametrize(
        "k, t, p", [(5, 10, 1.0), (10, 10, 0.001953125), (8, 10, 0.109375), (9, 10, 0.021484375)]
    )
    def test_examples(self, k, t, p):
        assert binom_p_value(k, t) == p
        assert float(exact_two_sided_p(k, t)) == p

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            binom_p_value(11, 10)
        with pytest.raises(ValueError):
            binom_p_value(0, 0)
        with pytest.raises(ValueError):
            binom_p_value(-1, 5)

    def test_oracle_all_small_t(self):
        for t in range(1, 31):
            for k in range(t + 1):
                assert abs(binom_p_value(k, t) - float(exact_two_sided_p(k, t))) <= 1e-12, (k, t)

    @given(st.integers(1, 400).flatmap(lambda t: st.tuples(st.integers(0, t), st.just(t))))
    def test_symmetry(self, kt):
        k, t = kt
        assert binom_p_value(k, t) == binom_p_value(t - k, t)

    @given(st.integers(1, 300))
    def test_monotone_in_majority(self, t):
        ps = [binom_p_value(m, t) for m in range((t + 1) // 2, t + 1)]
        assert all(a >= b for a, b in zip(ps, ps[1:]))

    @pytest.mark.parametrize("t", range(1, 51))
    def test_unanimity(self, t):
        assert binom_p_value(t, t) == 2.0 * 2.0**-t or (t == 1 and binom_p_value(1, 1) == 1.0)

    @pytest.mark.parametrize("t", [200, 1001, 10_000])
    def test_large_t_relative_accuracy(self, t):
        for k in (t // 2 + t // 20, t // 2 + t // 10, t - 3):
            exact = exact_two_sided_p(k, t)
            got = binom_p_value(k, t)
            assert abs(got - float(exact)) <= 1e-12 * max(float(exact), 1e-300) + 1e-300

    def test_log_pmf_matches_exact(self):
        for t in (7, 60, 500):
            for i in (0, 1, t // 3, t // 2, t):
                assert math.isclose(log_binom_pmf_half(i, t), math.log(math.comb(t, i)) - t * math.log(2), rel_tol=1e-13, abs_tol=1e-13)


def test_p_value_table_indexing():
    table = p_value_table(12)
    for s in range(1, 13):
        for a in range(s + 1):
            assert table[a, s] == binom_p_value(a, s)
    assert np.all(table <= 1.0)
