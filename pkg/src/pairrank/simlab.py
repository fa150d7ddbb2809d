"""Monte Carlo comparison of ranking estimators.

Draws true abilities from a chosen law, schedules matches under a matching
design, fits every requested method on the simulated matches alone, and
scores each method by Kendall tau against the true abilities.  True abilities
never reach the estimators; they are used only for scheduling (the
locality design) and the final tau.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .btmle import FitResult, fit_mle
from .comparisons import ComparisonDataset, aggregate
from .exceptions import PairRankError
from .fusedlasso import LassoSolution, default_lambda_grid, solve_path
from .npmle import (
    MixingDistribution,
    PosteriorSummary,
    posterior_summary,
)
from .scores import METHODS, borda, kendall_tau, weighted_borda

LAWS = ("lognormal_shift", "dirac_mixture")
DESIGNS = ("RS", "LS")

#: methods that need the maximum likelihood fit
_FIT_METHODS = frozenset({"MLE", "KWPM", "KWPMs", "KWPR", "RMLE"})
#: methods that additionally need the fitted mixing distribution
_EB_METHODS = frozenset({"KWPM", "KWPMs", "KWPR"})


@dataclass(frozen=True)
class AbilityLaw:
    """Distribution of true abilities on the rating (multiplicative) scale.

    ``lognormal_shift``: exp(Z + shift) with Z standard normal, i.e. a
    lognormal whose log-scale location is ``shift``.  Win odds depend only
    on ability ratios, so the shift rescales abilities without changing any
    match distribution; it is kept for configuration compatibility.
    ``dirac_mixture``: a two-point mass plus Gaussian jitter; draws that land
    at or below zero are clamped to ``clamp`` (with a warning).
    """

    kind: str
    shift: float = 2.0
    atoms: tuple[float, float] = (4.0, 8.0)
    atom_probs: tuple[float, float] = (0.8, 0.2)
    noise_scale: float = 1.0 / 3.0
    clamp: float = 1e-6

    def __post_init__(self):
        if self.kind not in LAWS:
            raise ValueError(f"unknown ability law {self.kind!r}; choose from {LAWS}")
        if abs(sum(self.atom_probs) - 1.0) > 1e-12:
            raise ValueError("atom_probs must sum to 1")


@dataclass(frozen=True)
class MatchingDesign:
    """How opponents meet.

    ``RS`` picks uniformly random distinct pairs.  ``LS`` picks the first
    player uniformly; with probability ``1 - mix`` the opponent is uniform
    among the ``window`` closest others by true-ability rank (rank ties
    broken toward the lower rank), otherwise uniform among all others.  So
    matches concentrate among similar players while every pair still meets
    occasionally.  ``mix`` keeps the comparison graph well connected; with
    ``mix = 0`` and a small window the graph degenerates into a banded
    chain whose estimates drift freely over long rank distances.
    ``window >= n_players - 1`` makes LS coincide with RS for any ``mix``.
    """

    kind: str
    window: int = 5
    mix: float = 0.25

    def __post_init__(self):
        if self.kind not in DESIGNS:
            raise ValueError(f"unknown design {self.kind!r}; choose from {DESIGNS}")
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError("mix must lie in [0, 1]")


def draw_abilities(law: AbilityLaw, size: int, rng) -> np.ndarray:
    """Sample true abilities (positive scale)."""
    if size < 1:
        raise ValueError("size must be at least 1")
    if law.kind == "lognormal_shift":
        return np.exp(rng.standard_normal(size) + law.shift)
    base = rng.choice(np.asarray(law.atoms, dtype=np.float64), size=size,
                      p=np.asarray(law.atom_probs, dtype=np.float64))
    out = base + law.noise_scale * rng.standard_normal(size)
    bad = out <= 0.0
    if np.any(bad):
        warnings.warn(
            f"{int(bad.sum())} non-positive ability draw(s) clamped to {law.clamp}",
            UserWarning,
            stacklevel=2,
        )
        out = np.where(bad, law.clamp, out)
    return out


def _nearest_rank_table(n_players: int, window: int) -> np.ndarray:
    """For each ability rank, the ``window`` nearest other ranks.

    Sorted by rank distance; at equal distance the lower rank comes first,
    which also makes it the one kept when the window cuts a distance class.
    """
    table = np.empty((n_players, window), dtype=np.int64)
    for rank in range(n_players):
        neighbors = []
        distance = 1
        while len(neighbors) < window:
            if rank - distance >= 0:
                neighbors.append(rank - distance)
            if len(neighbors) < window and rank + distance < n_players:
                neighbors.append(rank + distance)
            distance += 1
        table[rank] = neighbors
    return table


def draw_matches(alpha, design: MatchingDesign, n_matches: int, rng) -> np.ndarray:
    """Simulate ``n_matches`` matches; rows are ``(i, j, outcome)``.

    ``outcome=1`` means ``i`` beat ``j`` with probability
    ``alpha_i / (alpha_i + alpha_j)``.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    n_players = len(alpha)
    if n_players < 2:
        raise ValueError("need at least 2 players")
    if n_matches < 1:
        raise ValueError("need at least 1 match")
    if np.any(alpha <= 0):
        raise ValueError("abilities must be positive")
    first = rng.integers(0, n_players, size=n_matches)
    if design.kind == "RS":
        second = rng.integers(0, n_players - 1, size=n_matches)
        second += second >= first
    else:
        window = min(design.window, n_players - 1)
        order = np.argsort(alpha, kind="stable")
        rank_of = np.empty(n_players, dtype=np.int64)
        rank_of[order] = np.arange(n_players)
        table = _nearest_rank_table(n_players, window)
        pick = rng.integers(0, window, size=n_matches)
        local = order[table[rank_of[first], pick]]
        unrestricted = rng.integers(0, n_players - 1, size=n_matches)
        unrestricted += unrestricted >= first
        second = np.where(rng.random(n_matches) < design.mix, unrestricted, local)
    win_prob = alpha[first] / (alpha[first] + alpha[second])
    outcome = (rng.random(n_matches) < win_prob).astype(np.int64)
    return np.column_stack([first, second, outcome])


@dataclass(frozen=True)
class MethodScores:
    """Scores per method plus the shared intermediate artifacts."""

    scores: dict[str, np.ndarray]
    errors: dict[str, str]
    fit: FitResult | None = None
    posterior: PosteriorSummary | None = None
    mixing: MixingDistribution | None = None
    selected: LassoSolution | None = None


def compute_method_scores(
    dataset: ComparisonDataset,
    methods=METHODS,
    rank_ties: str = "weak",
    bandwidth: float | None = None,
) -> MethodScores:
    """Fit every requested method on one dataset, sharing intermediates.

    Failures are collected per method rather than raised: count methods stay
    available when the likelihood fit diverges.
    """
    methods = tuple(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
    scores: dict[str, np.ndarray] = {}
    errors: dict[str, str] = {}
    if "B" in methods:
        scores["B"] = borda(dataset)
    if "WB" in methods:
        scores["WB"] = weighted_borda(dataset)

    fit = None
    needs_fit = [m for m in methods if m in _FIT_METHODS]
    if needs_fit:
        try:
            fit = fit_mle(dataset)
        except PairRankError as exc:
            for m in needs_fit:
                errors[m] = str(exc)
            return MethodScores(scores=scores, errors=errors)
    if "MLE" in methods:
        scores["MLE"] = fit.theta.copy()

    posterior = None
    if any(m in _EB_METHODS for m in methods):
        try:
            posterior = posterior_summary(fit, bandwidth=bandwidth, ties=rank_ties)
        except PairRankError as exc:
            for m in methods:
                if m in _EB_METHODS:
                    errors[m] = str(exc)
        else:
            if "KWPM" in methods:
                scores["KWPM"] = posterior.post_mean
            if "KWPMs" in methods:
                scores["KWPMs"] = posterior.post_mean_smoothed
            if "KWPR" in methods:
                scores["KWPR"] = posterior.post_rank

    selected = None
    if "RMLE" in methods:
        try:
            path = solve_path(dataset, default_lambda_grid(dataset))
            selected = path.select()
            scores["RMLE"] = selected.alpha.copy()
        except PairRankError as exc:
            errors["RMLE"] = str(exc)
    return MethodScores(
        scores=scores,
        errors=errors,
        fit=fit,
        posterior=posterior,
        mixing=None if posterior is None else posterior.mixing,
        selected=selected,
    )


@dataclass(frozen=True)
class SimConfig:
    """One simulation grid: laws x designs x sample sizes x replications."""

    players: int = 100
    laws: tuple[str, ...] = LAWS
    designs: tuple[str, ...] = DESIGNS
    sample_sizes: tuple[int, ...] = (1000, 5000, 10000, 50000, 100000)
    replications: int = 100
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    ls_window: int = 5
    ls_mix: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "laws", tuple(self.laws))
        object.__setattr__(self, "designs", tuple(self.designs))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "methods", tuple(self.methods))
        problems = []
        if self.players < 2:
            problems.append("players")
        if not self.laws or any(law not in LAWS for law in self.laws):
            problems.append("laws")
        if not self.designs or any(d not in DESIGNS for d in self.designs):
            problems.append("designs")
        if not self.sample_sizes or any(n < 1 for n in self.sample_sizes):
            problems.append("sample_sizes")
        if self.replications < 1:
            problems.append("replications")
        if not self.methods or any(m not in METHODS for m in self.methods):
            problems.append("methods")
        if self.ls_window < 1:
            problems.append("ls_window")
        if not 0.0 <= self.ls_mix <= 1.0:
            problems.append("ls_mix")
        if problems:
            raise ValueError(f"invalid simulation config fields: {problems}")

    _FIELDS = ("players", "laws", "designs", "sample_sizes", "replications",
               "methods", "seed", "ls_window", "ls_mix")

    @classmethod
    def from_dict(cls, payload: dict) -> "SimConfig":
        if not isinstance(payload, dict):
            raise ValueError("simulation config must be a JSON object")
        unknown = sorted(set(payload) - set(cls._FIELDS))
        if unknown:
            raise ValueError(f"unknown simulation config keys: {unknown}")
        return cls(**payload)

    def to_dict(self) -> dict:
        return {
            "players": self.players,
            "laws": list(self.laws),
            "designs": list(self.designs),
            "sample_sizes": list(self.sample_sizes),
            "replications": self.replications,
            "methods": list(self.methods),
            "seed": self.seed,
            "ls_window": self.ls_window,
            "ls_mix": self.ls_mix,
        }

    def cells(self) -> list[tuple[str, str, int]]:
        return [
            (law, design, n)
            for law in self.laws
            for design in self.designs
            for n in self.sample_sizes
        ]


@dataclass(frozen=True)
class SimResult:
    """Long per-replication results and the per-cell summary."""

    results: pd.DataFrame
    summary: pd.DataFrame
    config: SimConfig


def _law_from_name(name: str) -> AbilityLaw:
    return AbilityLaw(kind=name)


def _design_from_name(name: str, window: int, mix: float) -> MatchingDesign:
    return MatchingDesign(kind=name, window=window, mix=mix)


def _run_replication(law, design, n_matches, methods, players, seed, cell_index, rep):
    """One replication with a single retry on failure; returns row dicts.

    The retry redraws everything under a fresh stream (attempt index enters
    the seed spawn key), so a separated draw is not replayed verbatim.
    """
    rows = []
    for attempt in (0, 1):
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(cell_index, rep, attempt))
        )
        alpha = draw_abilities(law, players, rng)
        records = draw_matches(alpha, design, n_matches, rng)
        dataset = aggregate(records, players)
        outcome = compute_method_scores(dataset, methods)
        taus = {}
        failures = dict(outcome.errors)
        for m, s in outcome.scores.items():
            try:
                taus[m] = kendall_tau(alpha, s)
            except ValueError as exc:
                failures[m] = str(exc)
        if not failures:
            status = "ok" if attempt == 0 else "retried"
            for m in methods:
                rows.append({"method": m, "replication": rep,
                             "tau": taus[m], "status": status})
            return rows
    # both attempts failed for at least one method: record what we have
    for m in methods:
        if m in taus:
            rows.append({"method": m, "replication": rep,
                         "tau": taus[m], "status": "retried"})
        else:
            rows.append({"method": m, "replication": rep,
                         "tau": math.nan, "status": "failed"})
    return rows


def run_cell(
    law: AbilityLaw,
    design: MatchingDesign,
    n_matches: int,
    methods=METHODS,
    replications: int = 100,
    seed: int = 0,
    players: int = 100,
    cell_index: int = 0,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """All replications of one (law, design, sample size) cell.

    Replications are independent streams keyed by ``(cell_index, rep,
    attempt)``, so results do not depend on ``n_jobs`` or scheduling.
    """
    methods = tuple(methods)
    chunks = Parallel(n_jobs=n_jobs)(
        delayed(_run_replication)(
            law, design, n_matches, methods, players, seed, cell_index, rep
        )
        for rep in range(replications)
    )
    rows = [row for chunk in chunks for row in chunk]
    frame = pd.DataFrame(rows, columns=["method", "replication", "tau", "status"])
    frame.insert(0, "n", n_matches)
    frame.insert(0, "design", design.kind)
    frame.insert(0, "law", law.kind)
    return frame


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Mean tau and its standard error per cell, failed replications excluded."""
    ok = results[results["status"] != "failed"]
    grouped = ok.groupby(["law", "design", "n", "method"], sort=True)["tau"]
    summary = grouped.agg(
        mean_tau="mean",
        se_tau=lambda x: x.std(ddof=1) / math.sqrt(len(x)) if len(x) > 1 else math.nan,
        n_ok="count",
    ).reset_index()
    return summary


def run_grid(config: SimConfig, n_jobs: int = 1) -> SimResult:
    """Run the whole simulation grid; cell order and streams are fixed."""
    frames = []
    for cell_index, (law_name, design_name, n_matches) in enumerate(config.cells()):
        law = _law_from_name(law_name)
        design = _design_from_name(design_name, config.ls_window, config.ls_mix)
        frames.append(
            run_cell(
                law, design, n_matches,
                methods=config.methods,
                replications=config.replications,
                seed=config.seed,
                players=config.players,
                cell_index=cell_index,
                n_jobs=n_jobs,
            )
        )
    results = pd.concat(frames, ignore_index=True)
    return SimResult(results=results, summary=summarize(results), config=config)
