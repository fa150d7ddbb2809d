"""Synthetic fixtures: round robins, citation-style matrices, toy schedules."""

from __future__ import annotations

import numpy as np

from .comparisons import CitationMatrix, ComparisonDataset


def make_round_robin(
    n_players: int = 20,
    matches_per_pair: int = 8,
    theta=None,
    seed: int = 0,
) -> ComparisonDataset:
    """Balanced round robin: every pair meets ``matches_per_pair`` times.

    Outcomes are drawn from a Bradley-Terry model at the given log-ratings
    (standard normal draws when ``theta`` is ``None``).
    """
    if n_players < 2 or matches_per_pair < 1:
        raise ValueError("need at least 2 players and 1 match per pair")
    rng = np.random.default_rng(seed)
    if theta is None:
        theta = rng.standard_normal(n_players)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (n_players,):
        raise ValueError("theta must have one entry per player")
    iu, ju = np.triu_indices(n_players, k=1)
    prob = 1.0 / (1.0 + np.exp(-(theta[iu] - theta[ju])))
    wins = rng.binomial(matches_per_pair, prob)
    return ComparisonDataset(
        n_players=n_players,
        pair_i=iu,
        pair_j=ju,
        n_matches=np.full(len(iu), matches_per_pair, dtype=np.int64),
        wins=wins.astype(np.int64),
    )


def make_citation_matrix(
    n_journals: int = 86,
    seed: int = 0,
    mean_exchanges: float = 60.0,
    influence_scale: float = 0.9,
) -> CitationMatrix:
    """Synthetic cross-citation counts with a latent influence ordering.

    Journal sizes vary log-normally; the number of cross citations between a
    pair is Poisson in the product of sizes, split binomially by the latent
    influence gap.  The diagonal carries self-citations so ingestion has
    something to drop.  Labels are ``J001``, ``J002``, ...
    """
    if n_journals < 2:
        raise ValueError("need at least 2 journals")
    rng = np.random.default_rng(seed)
    influence = rng.standard_normal(n_journals) * influence_scale
    size = np.exp(rng.standard_normal(n_journals) * 0.5)
    size /= size.mean()
    counts = np.zeros((n_journals, n_journals), dtype=np.int64)
    iu, ju = np.triu_indices(n_journals, k=1)
    totals = rng.poisson(mean_exchanges * size[iu] * size[ju])
    prob = 1.0 / (1.0 + np.exp(-(influence[iu] - influence[ju])))
    wins_i = rng.binomial(totals, prob)
    counts[iu, ju] = wins_i
    counts[ju, iu] = totals - wins_i
    diag = rng.poisson(5.0 * mean_exchanges * size)
    counts[np.diag_indices(n_journals)] = diag
    labels = tuple(f"J{k + 1:03d}" for k in range(n_journals))
    return CitationMatrix(labels=labels, counts=counts)


def make_dominant_player(
    n_players: int = 8,
    matches_per_pair: int = 12,
    gap: float = 3.0,
    seed: int = 0,
) -> ComparisonDataset:
    """Round robin where player 0 sits ``gap`` log-units above a tight field.

    Useful for path fixtures: the dominant player's rating should stay on top
    at every penalty level until the final full collapse.
    """
    rng = np.random.default_rng(seed)
    theta = np.concatenate([[gap], rng.standard_normal(n_players - 1) * 0.4])
    return make_round_robin(
        n_players=n_players, matches_per_pair=matches_per_pair,
        theta=theta, seed=seed + 1,
    )


def make_fit_inputs(
    n_players: int = 200,
    seed: int = 0,
    noise_low: float = 0.05,
    noise_high: float = 0.4,
    atoms=(-1.0, 0.0, 1.5),
    atom_probs=(0.3, 0.4, 0.3),
):
    """Gaussian-observation inputs from a known discrete mixing distribution.

    Returns ``(theta_hat, sigma_hat, theta_true, atoms, atom_probs)``; handy
    for exercising the mixture fit against a known truth.
    """
    rng = np.random.default_rng(seed)
    atoms = np.asarray(atoms, dtype=np.float64)
    atom_probs = np.asarray(atom_probs, dtype=np.float64)
    if atoms.shape != atom_probs.shape or abs(atom_probs.sum() - 1.0) > 1e-12:
        raise ValueError("atoms and atom_probs must align, probs summing to 1")
    theta_true = rng.choice(atoms, size=n_players, p=atom_probs)
    sigma_hat = rng.uniform(noise_low, noise_high, size=n_players)
    theta_hat = theta_true + sigma_hat * rng.standard_normal(n_players)
    return theta_hat, sigma_hat, theta_true, atoms, atom_probs
