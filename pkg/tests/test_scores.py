"""Count-based scores, rank construction, and rank agreement.

Every score is cross-checked against a brute-force double loop; the
tau statistic is checked against direct concordant/discordant counting
with the tie correction.
"""

import math

import numpy as np
import pytest

from pairrank.btmle import fit_mle
from pairrank.comparisons import MatchRecord, aggregate, win_totals
from pairrank.scores import (
    METHODS,
    RankingTable,
    borda,
    kendall_tau,
    ranks_from_scores,
    weighted_borda,
)

from conftest import empty_dataset, random_dataset


def test_method_identifiers():
    assert METHODS == ("MLE", "KWPM", "KWPMs", "KWPR", "RMLE", "B", "WB")


class TestBorda:
    def test_single_pair(self):
        ds = aggregate([MatchRecord(0, 1, 1)] * 3 + [MatchRecord(1, 0, 1)], 2)
        assert borda(ds).tolist() == [3.0, 1.0]

    def test_empty_dataset_is_zeros(self):
        assert borda(empty_dataset(4)).tolist() == [0.0] * 4

    def test_equals_win_totals(self, rng):
        ds = random_dataset(rng, 11)
        assert np.array_equal(borda(ds), win_totals(ds).astype(float))


class TestWeightedBorda:
    def test_one_win_per_opponent(self):
        ds = aggregate([(0, 1), (0, 2), (0, 3)], 4)
        assert weighted_borda(ds)[0] == 3.0

    def test_even_splits_give_half_per_opponent(self):
        records = []
        for i in range(4):
            for j in range(i + 1, 4):
                records += [(i, j, 1), (i, j, 0)]
        ds = aggregate(records, 4)
        assert np.allclose(weighted_borda(ds), 1.5)

    def test_double_loop_oracle(self, rng):
        for _ in range(10):
            ds = random_dataset(rng, int(rng.integers(3, 10)))
            expected = np.zeros(ds.n_players)
            for i, j, n, w in ds.pairs():
                expected[i] += w / n
                expected[j] += (n - w) / n
            assert np.allclose(weighted_borda(ds), expected)

    def test_reduces_to_borda_under_balance(self, rng):
        # complete schedule, equal meetings: same ordering, fixed ratio
        n, per_pair = 6, 4
        records = []
        for i in range(n):
            for j in range(i + 1, n):
                for k in range(per_pair):
                    records.append((i, j, int(rng.integers(2))))
        ds = aggregate(records, n)
        assert np.allclose(weighted_borda(ds), borda(ds) / per_pair)


class TestRanksFromScores:
    def test_higher_is_better(self):
        assert ranks_from_scores([10, 20, 30]).tolist() == [3.0, 2.0, 1.0]

    def test_ties_average(self):
        assert ranks_from_scores([5, 5]).tolist() == [1.5, 1.5]

    def test_lower_is_better_flag(self):
        assert ranks_from_scores([10, 20, 30], higher_is_better=False).tolist() == [
            1.0,
            2.0,
            3.0,
        ]


def tau_b_oracle(a, b):
    """Tie-corrected tau via direct O(n^2) sign counting."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(a)
    num = 0
    for i in range(n):
        for j in range(i + 1, n):
            num += np.sign(a[i] - a[j]) * np.sign(b[i] - b[j])
    n0 = n * (n - 1) / 2

    def tie_pairs(x):
        _, counts = np.unique(x, return_counts=True)
        return float((counts * (counts - 1) / 2).sum())

    return num / math.sqrt((n0 - tie_pairs(a)) * (n0 - tie_pairs(b)))


class TestKendallTau:
    def test_identical_orderings(self):
        assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)

    def test_reversed_orderings(self):
        assert kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_counting_oracle_on_random_vectors(self, rng):
        for _ in range(15):
            n = int(rng.integers(5, 50))
            a = rng.integers(0, 10, size=n).astype(float)  # ties likely
            b = a + rng.normal(0, 2, size=n)
            b = np.round(b)  # ties in b too
            if len(np.unique(a)) == 1 or len(np.unique(b)) == 1:
                continue
            assert kendall_tau(a, b) == pytest.approx(tau_b_oracle(a, b), abs=1e-12)

    def test_invariant_under_monotone_transform(self, rng):
        a = rng.normal(size=30)
        b = rng.normal(size=30)
        base = kendall_tau(a, b)
        assert kendall_tau(np.exp(a), b) == pytest.approx(base, abs=1e-12)
        assert kendall_tau(a, 3 * b + 7) == pytest.approx(base, abs=1e-12)

    def test_constant_vector_is_an_error(self):
        with pytest.raises(ValueError, match="constant"):
            kendall_tau([1, 1, 1], [1, 2, 3])
        with pytest.raises(ValueError, match="constant"):
            kendall_tau([1, 2, 3], [2, 2, 2])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            kendall_tau([1, 2], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(ValueError):
            kendall_tau([1], [2])


class TestRankingTable:
    def test_from_scores_ranks(self):
        table = RankingTable.from_scores("B", [3.0, 1.0, 2.0])
        assert table.method == "B"
        assert table.ranks.tolist() == [1.0, 3.0, 2.0]

    def test_rows_are_label_score_rank(self):
        table = RankingTable.from_scores("MLE", [0.0, 1.5], labels=("a", "b"))
        rows = list(table.rows())
        assert rows == [("MLE", "a", 0.0, 2.0), ("MLE", "b", 1.5, 1.0)]

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="method"):
            RankingTable.from_scores("bogus", [1.0, 2.0])

    def test_rank_permutation_when_distinct(self, rng):
        scores = rng.permutation(10).astype(float)
        table = RankingTable.from_scores("WB", scores)
        assert sorted(table.ranks.tolist()) == list(range(1, 11))


def test_borda_order_matches_mle_under_balanced_complete_design(rng):
    # with equal meeting counts everywhere the win totals carry all the
    # ranking information, so the two orderings must agree
    n, per_pair = 8, 6
    theta = rng.normal(size=n)
    records = []
    for i in range(n):
        for j in range(i + 1, n):
            p = 1.0 / (1.0 + np.exp(theta[j] - theta[i]))
            for _ in range(per_pair):
                records.append((i, j, int(rng.random() < p)))
    ds = aggregate(records, n)
    fit = fit_mle(ds)
    b = borda(ds)
    for i in range(n):
        for j in range(n):
            if b[i] > b[j]:
                assert fit.theta[i] > fit.theta[j]
