import numpy as np
import pytest

from pairrank.comparisons import ComparisonDataset, MatchRecord, aggregate


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_dataset(rng, n_players, mean_matches=6.0, ensure_connected=True):
    """A random aggregated dataset whose comparison graph is connected.

    Connectivity comes from a spanning chain with at least one split pair,
    so the MLE stays finite.
    """
    records = []
    for i in range(n_players - 1):
        records.append(MatchRecord(i, i + 1, 1))
        records.append(MatchRecord(i, i + 1, 0))
    n_extra = rng.poisson(mean_matches * n_players)
    for _ in range(n_extra):
        i = int(rng.integers(n_players))
        j = int(rng.integers(n_players - 1))
        if j >= i:
            j += 1
        records.append(MatchRecord(i, j, int(rng.integers(2))))
    return aggregate(records, n_players)


def empty_dataset(n_players):
    return ComparisonDataset(
        n_players=n_players,
        pair_i=np.array([], dtype=np.int64),
        pair_j=np.array([], dtype=np.int64),
        n_matches=np.array([], dtype=np.int64),
        wins=np.array([], dtype=np.int64),
    )
