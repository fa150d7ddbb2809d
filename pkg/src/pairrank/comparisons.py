"""Paired-comparison data: aggregation, citation-matrix ingestion, graph checks.

The central type is :class:`ComparisonDataset`, a sparse binomial summary of
match results: for every unordered pair that actually met it stores how many
matches were played and how many the lower-indexed player won.  Everything
downstream (likelihoods, scores, simulation) consumes this type.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import numpy.typing as npt
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cs_connected_components


class MatchRecord(NamedTuple):
    """One match between players ``i`` and ``j``; ``outcome=1`` means ``i`` won."""

    i: int
    j: int
    outcome: int = 1


@dataclass(frozen=True)
class ComparisonDataset:
    """Aggregated paired-comparison counts.

    Pairs are canonicalized: ``pair_i[k] < pair_j[k]`` for every stored pair,
    ``wins[k]`` counts wins of ``pair_i[k]`` over ``pair_j[k]`` out of
    ``n_matches[k]`` meetings.  Pairs that never met are not stored.
    """

    n_players: int
    pair_i: npt.NDArray[np.int64]
    pair_j: npt.NDArray[np.int64]
    n_matches: npt.NDArray[np.int64]
    wins: npt.NDArray[np.int64]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in ("pair_i", "pair_j", "n_matches", "wins"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.n_players < 1:
            raise ValueError("n_players must be at least 1")
        lengths = {
            len(self.pair_i), len(self.pair_j), len(self.n_matches), len(self.wins)
        }
        if len(lengths) != 1:
            raise ValueError("pair arrays must have equal length")
        if len(self.pair_i):
            if self.pair_i.min() < 0 or self.pair_j.max() >= self.n_players:
                raise ValueError("player index out of range")
            if np.any(self.pair_i >= self.pair_j):
                raise ValueError("pairs must be canonicalized with i < j")
            codes = self.pair_i * np.int64(self.n_players) + self.pair_j
            if len(np.unique(codes)) != len(codes):
                raise ValueError("duplicate pairs are not allowed")
            if np.any(self.n_matches < 1):
                raise ValueError("every stored pair needs at least one match")
            if np.any(self.wins < 0) or np.any(self.wins > self.n_matches):
                raise ValueError("wins must lie in [0, n_matches] for every pair")
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != self.n_players:
                raise ValueError("labels length must equal n_players")
            if len(set(labels)) != self.n_players:
                raise ValueError("labels must be unique")
            object.__setattr__(self, "labels", labels)

    @property
    def n_pairs(self) -> int:
        return int(len(self.pair_i))

    @property
    def total_matches(self) -> int:
        """Total number of individual matches, the sample size for BIC."""
        return int(self.n_matches.sum())

    def pairs(self) -> Iterator[tuple[int, int, int, int]]:
        """Yield ``(i, j, n_matches, wins_of_i)`` for every stored pair."""
        for i, j, n, w in zip(self.pair_i, self.pair_j, self.n_matches, self.wins):
            yield int(i), int(j), int(n), int(w)

    def label_of(self, index: int) -> str:
        if self.labels is not None:
            return self.labels[index]
        return str(index)

    def with_labels(self, labels: Sequence[str] | None) -> "ComparisonDataset":
        return replace(self, labels=None if labels is None else tuple(labels))

    def to_dict(self) -> dict:
        return {
            "n_players": self.n_players,
            "labels": list(self.labels) if self.labels is not None else None,
            "pairs": [list(p) for p in self.pairs()],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ComparisonDataset":
        try:
            n_players = int(payload["n_players"])
            raw_pairs = payload["pairs"]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"dataset payload is missing required field: {exc}") from exc
        labels = payload.get("labels")
        arr = np.asarray(raw_pairs, dtype=np.int64).reshape(-1, 4)
        return cls(
            n_players=n_players,
            pair_i=arr[:, 0],
            pair_j=arr[:, 1],
            n_matches=arr[:, 2],
            wins=arr[:, 3],
            labels=None if labels is None else tuple(labels),
        )


def aggregate(
    records, n_players: int, labels: Sequence[str] | None = None
) -> ComparisonDataset:
    """Aggregate individual match records into binomial pair counts.

    ``records`` is an iterable of ``(i, j)`` or ``(i, j, outcome)`` rows (or an
    equivalent integer array); ``outcome=1`` means ``i`` beat ``j`` and is the
    default for two-column input.
    """
    if n_players < 1:
        raise ValueError("n_players must be at least 1")
    if not isinstance(records, np.ndarray):
        # rows may mix (i, j) and (i, j, outcome); pad the former before
        # the array conversion, which requires a rectangular shape
        records = [
            (*r, 1) if hasattr(r, "__len__") and len(r) == 2 else r
            for r in records
        ]
        if not records:
            return ComparisonDataset(
                n_players, np.empty(0, np.int64), np.empty(0, np.int64),
                np.empty(0, np.int64), np.empty(0, np.int64),
                labels=None if labels is None else tuple(labels),
            )
    arr = np.asarray(records, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3):
        raise ValueError("records must be rows of (i, j) or (i, j, outcome)")
    ii, jj = arr[:, 0], arr[:, 1]
    outcome = arr[:, 2] if arr.shape[1] == 3 else np.ones(len(arr), np.int64)
    if len(arr):
        if ii.min() < 0 or jj.min() < 0 or max(ii.max(), jj.max()) >= n_players:
            raise ValueError("player index out of range in match records")
        if np.any(ii == jj):
            bad = int(np.flatnonzero(ii == jj)[0])
            raise ValueError(f"record {bad}: a player cannot meet itself")
        if not np.all((outcome == 0) | (outcome == 1)):
            raise ValueError("outcome must be 0 or 1")
    a = np.minimum(ii, jj)
    b = np.maximum(ii, jj)
    # win of the lower-indexed player: i won (outcome 1) and i is the lower index,
    # or j won and j is the lower index
    low_win = np.where(outcome == 1, ii == a, jj == a)
    codes = a * np.int64(n_players) + b
    uniq, inverse = np.unique(codes, return_inverse=True)
    n_matches = np.bincount(inverse, minlength=len(uniq)).astype(np.int64)
    wins = np.bincount(inverse, weights=low_win.astype(np.float64), minlength=len(uniq))
    return ComparisonDataset(
        n_players=n_players,
        pair_i=(uniq // n_players),
        pair_j=(uniq % n_players),
        n_matches=n_matches,
        wins=np.round(wins).astype(np.int64),
        labels=None if labels is None else tuple(labels),
    )


def as_comparison_dataset(X, n_players: int | None = None) -> ComparisonDataset:
    """Coerce estimator input to a :class:`ComparisonDataset`.

    Accepts a dataset as-is, or an array/sequence of match records (the player
    count defaults to ``max index + 1``).
    """
    if isinstance(X, ComparisonDataset):
        return X
    arr = np.asarray(list(X) if not isinstance(X, np.ndarray) else X, dtype=np.int64)
    if arr.size == 0:
        raise ValueError("cannot infer players from an empty record set")
    if n_players is None:
        n_players = int(arr[:, :2].max()) + 1
    return aggregate(arr, n_players)


@dataclass(frozen=True)
class CitationMatrix:
    """Square count matrix: ``counts[i, j]`` is the number of citations
    appearing in journal ``j`` that point to journal ``i``."""

    labels: tuple[str, ...]
    counts: npt.NDArray[np.int64]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).copy()
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"counts must be square, got shape {counts.shape}")
        if counts.shape[0] != len(labels):
            raise ValueError("labels length must match the matrix dimension")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")
        if np.any(counts < 0):
            raise ValueError("citation counts must be nonnegative")

    @property
    def n_journals(self) -> int:
        return len(self.labels)


def from_citation_matrix(matrix: CitationMatrix) -> ComparisonDataset:
    """Turn cross-citation counts into paired comparisons.

    Being cited wins: ``counts[i, j]`` citations in journal ``j`` to journal
    ``i`` count as ``counts[i, j]`` wins of ``i`` over ``j``, so the pair
    ``(i, j)`` meets ``counts[i, j] + counts[j, i]`` times.  Self-citations
    (the diagonal) carry no comparison and are dropped.  Warns if the
    resulting comparison graph is not connected.
    """
    p = matrix.n_journals
    iu, ju = np.triu_indices(p, k=1)
    wins = matrix.counts[iu, ju]
    losses = matrix.counts[ju, iu]
    n = wins + losses
    keep = n > 0
    dataset = ComparisonDataset(
        n_players=p,
        pair_i=iu[keep],
        pair_j=ju[keep],
        n_matches=n[keep],
        wins=wins[keep],
        labels=matrix.labels,
    )
    components = connected_components(dataset)
    if len(components) > 1:
        warnings.warn(
            f"comparison graph from the citation matrix is disconnected "
            f"({len(components)} components); ratings will not be jointly identified",
            UserWarning,
            stacklevel=2,
        )
    return dataset


def win_totals(dataset: ComparisonDataset) -> npt.NDArray[np.int64]:
    """Total matches won per player (the Borda count)."""
    totals = np.zeros(dataset.n_players, dtype=np.int64)
    np.add.at(totals, dataset.pair_i, dataset.wins)
    np.add.at(totals, dataset.pair_j, dataset.n_matches - dataset.wins)
    return totals


def matches_played(dataset: ComparisonDataset) -> npt.NDArray[np.int64]:
    """Total matches played per player."""
    totals = np.zeros(dataset.n_players, dtype=np.int64)
    np.add.at(totals, dataset.pair_i, dataset.n_matches)
    np.add.at(totals, dataset.pair_j, dataset.n_matches)
    return totals


def connected_components(dataset: ComparisonDataset) -> list[list[int]]:
    """Connected components of the comparison graph, sorted by smallest member.

    Players with no matches form singleton components.
    """
    p = dataset.n_players
    data = np.ones(dataset.n_pairs)
    graph = coo_matrix((data, (dataset.pair_i, dataset.pair_j)), shape=(p, p))
    n_comp, assignment = _cs_connected_components(graph, directed=False)
    groups: dict[int, list[int]] = {}
    for player, comp in enumerate(assignment):
        groups.setdefault(int(comp), []).append(player)
    return sorted(groups.values(), key=lambda c: c[0])


def read_citation_csv(path) -> CitationMatrix:
    """Read a square citation CSV.

    Expected layout: a header row of journal labels (first cell is a corner
    label and is ignored), then one row per journal whose first cell repeats
    the journal label in header order and whose remaining cells are
    nonnegative integer citation counts, column journal citing row journal.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ValueError(f"{path}: file is empty")
    header = [cell.strip() for cell in rows[0][1:]]
    if not header:
        raise ValueError(f"{path}: line 1: header has no journal labels")
    p = len(header)
    counts = np.zeros((p, p), dtype=np.int64)
    body = rows[1:]
    if len(body) != p:
        raise ValueError(
            f"{path}: expected {p} data rows to match the header, got {len(body)}"
        )
    for r, row in enumerate(body):
        lineno = r + 2
        cells = [cell.strip() for cell in row]
        if len(cells) != p + 1:
            raise ValueError(
                f"{path}: line {lineno}: expected {p + 1} cells, got {len(cells)}"
            )
        if cells[0] != header[r]:
            raise ValueError(
                f"{path}: line {lineno}: row label {cells[0]!r} does not match "
                f"header label {header[r]!r}"
            )
        for c, cell in enumerate(cells[1:]):
            try:
                value = int(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: {cell!r} is not an integer count"
                ) from None
            if value < 0:
                raise ValueError(f"{path}: line {lineno}: negative count {value}")
            counts[r, c] = value
    return CitationMatrix(labels=tuple(header), counts=counts)


def read_match_csv(
    path, labels: Sequence[str] | None = None
) -> tuple[list[MatchRecord], tuple[str, ...] | None]:
    """Read a match-log CSV with header ``winner,loser``.

    If ``labels`` is given it declares the player universe and every cell must
    be one of them; otherwise labels are collected in order of first
    appearance, unless every cell is an integer, in which case cells are read
    directly as 0-based player indices and the returned labels are ``None``.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ValueError(f"{path}: file is empty")
    header = [cell.strip().lower() for cell in rows[0]]
    if header != ["winner", "loser"]:
        raise ValueError(
            f"{path}: line 1: expected header 'winner,loser', got {rows[0]!r}"
        )
    body: list[tuple[int, list[str]]] = []
    for r, row in enumerate(rows[1:]):
        lineno = r + 2
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if len(cells) != 2 or not all(cells):
            raise ValueError(
                f"{path}: line {lineno}: expected two non-empty cells, got {row!r}"
            )
        body.append((lineno, cells))
    if not body:
        raise ValueError(f"{path}: no match rows found")

    def _is_int(token: str) -> bool:
        try:
            int(token)
        except ValueError:
            return False
        return True

    records: list[MatchRecord] = []
    if labels is not None:
        universe = tuple(str(x) for x in labels)
        if len(set(universe)) != len(universe):
            raise ValueError("declared labels must be unique")
        index = {lab: k for k, lab in enumerate(universe)}
        for lineno, (winner, loser) in body:
            for token in (winner, loser):
                if token not in index:
                    raise ValueError(
                        f"{path}: line {lineno}: unknown label {token!r}"
                    )
            records.append(MatchRecord(index[winner], index[loser], 1))
        out_labels: tuple[str, ...] | None = universe
    elif all(_is_int(w) and _is_int(l) for _, (w, l) in body):
        for lineno, (winner, loser) in body:
            wi, li = int(winner), int(loser)
            if wi < 0 or li < 0:
                raise ValueError(f"{path}: line {lineno}: negative player index")
            records.append(MatchRecord(wi, li, 1))
        out_labels = None
    else:
        index = {}
        for lineno, (winner, loser) in body:
            for token in (winner, loser):
                if token not in index:
                    index[token] = len(index)
            records.append(MatchRecord(index[winner], index[loser], 1))
        out_labels = tuple(index)
    for lineno, (winner, loser) in body:
        if winner == loser:
            raise ValueError(
                f"{path}: line {lineno}: winner and loser are both {winner!r}"
            )
    return records, out_labels


def dataset_from_match_csv(
    path, labels: Sequence[str] | None = None
) -> ComparisonDataset:
    """Read a ``winner,loser`` CSV and aggregate it into a dataset."""
    records, found = read_match_csv(path, labels=labels)
    if found is not None:
        n_players = len(found)
    else:
        n_players = max(max(r.i, r.j) for r in records) + 1
    return aggregate(records, n_players, labels=found)
