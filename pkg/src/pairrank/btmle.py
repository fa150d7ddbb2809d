"""Bradley-Terry maximum likelihood with full curvature information.

Ratings live on the log scale with player 0 anchored at zero.  The fit uses
damped Newton steps on the free coordinates and returns the inverse observed
information as the covariance of the free ratings, which downstream empirical
Bayes treats as known noise scales.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_vector
from .comparisons import (
    ComparisonDataset,
    as_comparison_dataset,
    connected_components,
    matches_played,
    win_totals,
)
from .exceptions import ConvergenceError, DisconnectedGraphError, DivergenceError


@dataclass(frozen=True)
class SolverOptions:
    """Newton solver controls for :func:`fit_mle`.

    ``tol`` bounds the max-norm of the score vector at the reported optimum;
    ``theta_cap`` declares the fit divergent once any log-rating passes it
    (a gap of 30 is a win probability within 1e-13 of certainty);
    ``strict`` rejects players with all wins or all losses up front instead
    of letting the iteration drift to the cap.
    """

    tol: float = 1e-10
    max_iter: int = 100
    theta_cap: float = 30.0
    strict: bool = True

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1 or self.theta_cap <= 0:
            raise ValueError("tol and theta_cap must be positive, max_iter >= 1")


@dataclass(frozen=True)
class FitResult:
    """A fitted Bradley-Terry model.

    ``theta`` has length ``n_players`` with ``theta[0] == 0`` (the anchor);
    ``se`` and ``cov`` describe the free players ``1..n_players-1`` only.
    """

    theta: npt.NDArray[np.float64]
    se: npt.NDArray[np.float64]
    cov: npt.NDArray[np.float64]
    loglik: float
    n_iter: int
    converged: bool
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64).copy()
        se = np.asarray(self.se, dtype=np.float64).copy()
        cov = np.asarray(self.cov, dtype=np.float64).copy()
        for arr in (theta, se, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "se", se)
        object.__setattr__(self, "cov", cov)
        p = len(theta) - 1
        if len(theta) < 1 or theta[0] != 0.0:
            raise ValueError("theta must anchor player 0 at exactly 0")
        if se.shape != (p,) or cov.shape != (p, p):
            raise ValueError("se and cov must cover the free players only")
        if p and (np.any(se <= 0) or not np.allclose(cov, cov.T)):
            raise ValueError("se must be positive and cov symmetric")

    @property
    def n_players(self) -> int:
        return len(self.theta)

    @property
    def alpha(self) -> npt.NDArray[np.float64]:
        """Ratings on the multiplicative scale, anchor at 1."""
        return np.exp(self.theta)

    def pairwise_covariance(self, i: int, j: int) -> npt.NDArray[np.float64]:
        return pairwise_covariance(self, i, j)

    def to_dict(self) -> dict:
        # anchor-aligned wire format: se carries a leading 0.0 for player 0
        return {
            "labels": list(self.labels) if self.labels is not None else None,
            "theta": [float(x) for x in self.theta],
            "se": [0.0] + [float(x) for x in self.se],
            "loglik": float(self.loglik),
            "converged": bool(self.converged),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def win_probability(theta_i, theta_j):
    """P(i beats j) for log-ratings ``theta_i`` and ``theta_j``; broadcasts."""
    theta_i = np.asarray(theta_i, dtype=np.float64)
    theta_j = np.asarray(theta_j, dtype=np.float64)
    out = expit(theta_i - theta_j)
    return float(out) if out.ndim == 0 else out


def log_likelihood(theta, dataset: ComparisonDataset) -> float:
    """Binomial Bradley-Terry log-likelihood (combinatorial constant dropped)."""
    theta = as_float_vector(theta, "theta")
    if len(theta) != dataset.n_players:
        raise ValueError(
            f"theta has {len(theta)} entries for {dataset.n_players} players"
        )
    diff = theta[dataset.pair_i] - theta[dataset.pair_j]
    # log sigma(x) = -log(1 + e^(-x)), stable in both tails
    log_p = -np.logaddexp(0.0, -diff)
    log_q = -np.logaddexp(0.0, diff)
    w = dataset.wins
    return float(np.sum(w * log_p + (dataset.n_matches - w) * log_q))


def score_vector(theta, dataset: ComparisonDataset) -> npt.NDArray[np.float64]:
    """Gradient of the log-likelihood in all coordinates (anchor included)."""
    theta = np.asarray(theta, dtype=np.float64)
    p_win = expit(theta[dataset.pair_i] - theta[dataset.pair_j])
    residual = dataset.wins - dataset.n_matches * p_win
    grad = np.zeros(dataset.n_players)
    np.add.at(grad, dataset.pair_i, residual)
    np.add.at(grad, dataset.pair_j, -residual)
    return grad


def fisher_information(theta, dataset: ComparisonDataset) -> npt.NDArray[np.float64]:
    """Negative Hessian of the log-likelihood in all coordinates."""
    theta = np.asarray(theta, dtype=np.float64)
    p_win = expit(theta[dataset.pair_i] - theta[dataset.pair_j])
    weight = dataset.n_matches * p_win * (1.0 - p_win)
    n = dataset.n_players
    info = np.zeros((n, n))
    ii, jj = dataset.pair_i, dataset.pair_j
    np.add.at(info, (ii, jj), -weight)
    np.add.at(info, (jj, ii), -weight)
    np.add.at(info, (ii, ii), weight)
    np.add.at(info, (jj, jj), weight)
    return info


def _check_identified(dataset: ComparisonDataset, strict: bool) -> None:
    components = connected_components(dataset)
    if len(components) > 1:
        raise DisconnectedGraphError(components)
    if strict and dataset.n_players > 1:
        wins = win_totals(dataset)
        played = matches_played(dataset)
        losses = played - wins
        bad = np.flatnonzero((wins == 0) | (losses == 0))
        if len(bad):
            raise DivergenceError(bad, "players with all losses or all wins")


def fit_mle(dataset: ComparisonDataset, options: SolverOptions | None = None) -> FitResult:
    """Maximum likelihood Bradley-Terry fit by damped Newton iteration.

    Raises :class:`DisconnectedGraphError` if the comparison graph is not
    connected, :class:`DivergenceError` if the likelihood has no finite
    maximizer, and :class:`ConvergenceError` if the score tolerance is not
    reached within ``options.max_iter`` iterations.
    """
    opts = options or SolverOptions()
    _check_identified(dataset, opts.strict)
    n = dataset.n_players
    theta = np.zeros(n)
    if n == 1:
        return FitResult(
            theta=theta, se=np.empty(0), cov=np.empty((0, 0)),
            loglik=log_likelihood(theta, dataset), n_iter=0, converged=True,
            labels=dataset.labels,
        )

    current_ll = log_likelihood(theta, dataset)
    n_iter = 0
    for n_iter in range(1, opts.max_iter + 1):
        grad_free = score_vector(theta, dataset)[1:]
        grad_norm = np.max(np.abs(grad_free))
        if grad_norm <= opts.tol:
            n_iter -= 1
            break
        info_free = fisher_information(theta, dataset)[1:, 1:]
        try:
            step = np.linalg.solve(info_free, grad_free)
        except np.linalg.LinAlgError:
            ridge = 1e-10 * (np.trace(info_free) / (n - 1) + 1.0)
            step = np.linalg.solve(info_free + ridge * np.eye(n - 1), grad_free)
        scale = 1.0
        improved = False
        while scale >= 2.0 ** -60:
            candidate = theta.copy()
            candidate[1:] += scale * step
            candidate_ll = log_likelihood(candidate, dataset)
            if candidate_ll > current_ll:
                theta, current_ll, improved = candidate, candidate_ll, True
                break
            scale /= 2.0
        if not improved:
            # likelihood gains underflow before a tight score tolerance is
            # reached; ride the quadratic tail on the score norm instead
            candidate = theta.copy()
            candidate[1:] += step
            if np.max(np.abs(score_vector(candidate, dataset)[1:])) < grad_norm:
                theta = candidate
                current_ll = log_likelihood(theta, dataset)
            else:
                break
        if np.max(np.abs(theta)) > opts.theta_cap:
            culprits = np.flatnonzero(np.abs(theta) > opts.theta_cap)
            raise DivergenceError(culprits, f"|log-rating| exceeded {opts.theta_cap}")
    else:
        grad_free = score_vector(theta, dataset)[1:]
        gap = float(np.max(np.abs(grad_free)))
        raise ConvergenceError(
            f"Newton solver did not reach tol={opts.tol} within "
            f"{opts.max_iter} iterations (score max-norm {gap:.3e})",
            gap=gap,
        )

    grad_free = score_vector(theta, dataset)[1:]
    gap = float(np.max(np.abs(grad_free)))
    if gap > opts.tol:
        raise ConvergenceError(
            f"Newton solver stalled at score max-norm {gap:.3e} (tol {opts.tol})",
            gap=gap,
        )
    info_free = fisher_information(theta, dataset)[1:, 1:]
    cov = np.linalg.inv(info_free)
    cov = (cov + cov.T) / 2.0
    return FitResult(
        theta=theta,
        se=np.sqrt(np.diag(cov)),
        cov=cov,
        loglik=log_likelihood(theta, dataset),
        n_iter=n_iter,
        converged=True,
        labels=dataset.labels,
    )


def pairwise_covariance(fit: FitResult, i: int, j: int) -> npt.NDArray[np.float64]:
    """2x2 covariance of ``(theta[i], theta[j])``; anchor entries are zero."""
    n = fit.n_players
    for idx in (i, j):
        if not 0 <= idx < n:
            raise ValueError(f"player index {idx} out of range for {n} players")
    if i == j:
        raise ValueError("pairwise covariance needs two distinct players")

    def var(idx):
        return 0.0 if idx == 0 else fit.cov[idx - 1, idx - 1]

    cross = 0.0 if (i == 0 or j == 0) else fit.cov[i - 1, j - 1]
    return np.array([[var(i), cross], [cross, var(j)]])


class BradleyTerry(BaseEstimator):
    """Bradley-Terry rating estimator with a scikit-learn interface.

    Parameters
    ----------
    tol : float
        Gradient max-norm tolerance at the optimum.
    max_iter : int
        Newton iteration budget.
    theta_cap : float
        Log-rating magnitude beyond which the fit is declared divergent.
    strict : bool
        Reject all-win / all-loss players before iterating.

    Attributes
    ----------
    result_ : FitResult
    theta_, se_, cov_, loglik_, n_iter_ : fitted aliases
    n_players_ : int
    """

    def __init__(self, tol: float = 1e-10, max_iter: int = 100,
                 theta_cap: float = 30.0, strict: bool = True):
        self.tol = tol
        self.max_iter = max_iter
        self.theta_cap = theta_cap
        self.strict = strict

    def fit(self, X, y=None):
        """Fit on a :class:`ComparisonDataset` or an array of match records."""
        dataset = as_comparison_dataset(X)
        options = SolverOptions(
            tol=self.tol, max_iter=self.max_iter,
            theta_cap=self.theta_cap, strict=self.strict,
        )
        self.result_ = fit_mle(dataset, options)
        self.n_players_ = self.result_.n_players
        self.theta_ = self.result_.theta
        self.se_ = self.result_.se
        self.cov_ = self.result_.cov
        self.loglik_ = self.result_.loglik
        self.n_iter_ = self.result_.n_iter
        return self

    def predict_proba(self, pairs):
        """Win probability of the first player in each ``(i, j)`` row."""
        check_is_fitted(self, "result_")
        arr = np.asarray(pairs, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("pairs must be an (m, 2) array of player indices")
        if arr.size and (arr.min() < 0 or arr.max() >= self.n_players_):
            raise ValueError("player index out of range")
        return win_probability(self.theta_[arr[:, 0]], self.theta_[arr[:, 1]])
