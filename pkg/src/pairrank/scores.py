"""Count-based scores and rank utilities: Borda variants, ranks, Kendall tau."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.stats import kendalltau as _kendalltau
from scipy.stats import rankdata

from ._validation import as_float_vector, check_equal_length
from .comparisons import ComparisonDataset, win_totals

#: Method identifiers accepted by the ranking pipeline and the simulation grid.
METHODS = ("MLE", "KWPM", "KWPMs", "KWPR", "RMLE", "B", "WB")


def borda(dataset: ComparisonDataset) -> npt.NDArray[np.float64]:
    """Borda score: total number of matches won."""
    return win_totals(dataset).astype(np.float64)


def weighted_borda(dataset: ComparisonDataset) -> npt.NDArray[np.float64]:
    """Opponent-frequency-weighted Borda score.

    Each pair contributes its empirical win fraction rather than raw wins,
    which removes the schedule imbalance that distorts plain Borda counts.
    """
    scores = np.zeros(dataset.n_players)
    frac = dataset.wins / dataset.n_matches
    np.add.at(scores, dataset.pair_i, frac)
    np.add.at(scores, dataset.pair_j, 1.0 - frac)
    return scores


def ranks_from_scores(scores, higher_is_better: bool = True) -> npt.NDArray[np.float64]:
    """Competition ranks with ties averaged; rank 1 is best."""
    scores = as_float_vector(scores, "scores", min_len=1)
    return rankdata(-scores if higher_is_better else scores, method="average")


def kendall_tau(a, b) -> float:
    """Kendall rank correlation (tau-b, ties handled) between two score vectors."""
    a = as_float_vector(a, "a", min_len=2)
    b = as_float_vector(b, "b", min_len=2)
    check_equal_length(a, b, "a", "b")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValueError("kendall_tau is undefined for a constant vector")
    stat = _kendalltau(a, b).statistic
    if not np.isfinite(stat):
        raise ValueError("kendall_tau did not produce a finite value")
    return float(stat)


@dataclass(frozen=True)
class RankingTable:
    """Scores and ranks produced by one method, ready for tabular export."""

    method: str
    scores: npt.NDArray[np.float64]
    ranks: npt.NDArray[np.float64]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).copy()
        ranks = np.asarray(self.ranks, dtype=np.float64).copy()
        scores.setflags(write=False)
        ranks.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "ranks", ranks)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if scores.shape != ranks.shape or scores.ndim != 1:
            raise ValueError("scores and ranks must be vectors of equal length")
        if self.labels is not None and len(self.labels) != len(scores):
            raise ValueError("labels length must match scores")

    @classmethod
    def from_scores(cls, method: str, scores, labels=None,
                    higher_is_better: bool = True) -> "RankingTable":
        scores = as_float_vector(scores, "scores", min_len=1)
        ranks = ranks_from_scores(scores, higher_is_better=higher_is_better)
        return cls(method=method, scores=scores, ranks=ranks,
                   labels=None if labels is None else tuple(labels))

    def rows(self):
        """Yield ``(method, label, score, rank)`` rows."""
        for k in range(len(self.scores)):
            label = self.labels[k] if self.labels is not None else str(k)
            yield self.method, label, float(self.scores[k]), float(self.ranks[k])
