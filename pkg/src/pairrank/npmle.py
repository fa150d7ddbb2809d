"""Nonparametric maximum likelihood mixtures and empirical Bayes ranking rules.

Fitted log-ratings are treated as Gaussian observations ``theta_hat_i ~
N(theta_i, sigma_hat_i^2)`` of latent abilities drawn from an unknown mixing
distribution G.  G is estimated by maximum likelihood over distributions
supported on a fixed grid; posterior means, smoothed posterior means and
posterior expected ranks then follow from the fitted mixture.

All posterior computations run in the log domain: the anchor player enters
with a tiny noise scale and would underflow a naive weight computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_vector, check_equal_length, check_positive
from .btmle import FitResult
from .exceptions import ConvergenceError

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

#: Noise scale assigned to the anchor player in posterior rules.  Matches the
#: square root of the variance floor used for singular covariance blocks.
ANCHOR_SCALE = 1e-5


@dataclass(frozen=True)
class GaussianObservations:
    """Estimates with known noise scales: ``theta_hat[i] ~ N(theta_i, sigma_hat[i]^2)``."""

    theta_hat: npt.NDArray[np.float64]
    sigma_hat: npt.NDArray[np.float64]

    def __post_init__(self):
        theta_hat = as_float_vector(self.theta_hat, "theta_hat", min_len=1)
        sigma_hat = as_float_vector(self.sigma_hat, "sigma_hat", min_len=1)
        check_equal_length(theta_hat, sigma_hat, "theta_hat", "sigma_hat")
        if np.any(sigma_hat <= 0):
            raise ValueError("sigma_hat must be strictly positive")
        theta_hat.setflags(write=False)
        sigma_hat.setflags(write=False)
        object.__setattr__(self, "theta_hat", theta_hat)
        object.__setattr__(self, "sigma_hat", sigma_hat)

    def __len__(self) -> int:
        return len(self.theta_hat)


@dataclass(frozen=True)
class GridSpec:
    """Support grid for the mixture.

    Equally spaced atoms spanning the observations, padded by ``padding``
    times the largest noise scale on each side; explicit bounds override.
    """

    n_points: int = 301
    padding: float = 3.0
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("grid needs at least 2 points")
        if self.padding < 0:
            raise ValueError("padding must be nonnegative")

    def build(self, observations: GaussianObservations) -> npt.NDArray[np.float64]:
        pad = self.padding * float(observations.sigma_hat.max())
        lower = self.lower if self.lower is not None else float(observations.theta_hat.min()) - pad
        upper = self.upper if self.upper is not None else float(observations.theta_hat.max()) + pad
        if not upper > lower:
            raise ValueError(f"degenerate grid bounds [{lower}, {upper}]")
        return np.linspace(lower, upper, self.n_points)


@dataclass(frozen=True)
class MixingDistribution:
    """Discrete distribution over latent log-ratings."""

    atoms: npt.NDArray[np.float64]
    weights: npt.NDArray[np.float64]

    def __post_init__(self):
        atoms = as_float_vector(self.atoms, "atoms", min_len=1)
        weights = as_float_vector(self.weights, "weights", min_len=1)
        check_equal_length(atoms, weights, "atoms", "weights")
        if np.any(np.diff(atoms) <= 0):
            raise ValueError("atoms must be strictly increasing")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def mean(self) -> float:
        return float(self.atoms @ self.weights)


def _log_kernel(theta_hat, sigma_hat, atoms):
    """Log Gaussian density of each observation at each atom, shape (p, m)."""
    z = (theta_hat[:, None] - atoms[None, :]) / sigma_hat[:, None]
    return -0.5 * z * z - np.log(sigma_hat)[:, None] - _LOG_SQRT_2PI


def marginal_density(g: MixingDistribution, theta_hat, sigma_hat):
    """Mixture marginal density of observations with the given noise scales."""
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=np.float64))
    sigma_hat = np.broadcast_to(
        np.asarray(sigma_hat, dtype=np.float64), theta_hat.shape
    ).astype(np.float64)
    log_k = _log_kernel(theta_hat, sigma_hat, g.atoms)
    with np.errstate(divide="ignore"):
        log_w = np.log(g.weights)
    out = np.exp(logsumexp(log_k + log_w[None, :], axis=1))
    return float(out[0]) if out.shape == (1,) else out


def mixture_loglik(g: MixingDistribution, observations: GaussianObservations) -> float:
    """Marginal log-likelihood of the observations under mixing distribution g."""
    log_k = _log_kernel(observations.theta_hat, observations.sigma_hat, g.atoms)
    with np.errstate(divide="ignore"):
        log_w = np.log(g.weights)
    return float(np.sum(logsumexp(log_k + log_w[None, :], axis=1)))


def _kkt_gradient(A, g):
    """D_k = sum_i A_ik / (Ag)_i; optimality is max_k D_k <= p over the grid."""
    f = np.maximum(A @ g, 1e-300)
    return A.T @ (1.0 / f)


def _local_maxima(values) -> npt.NDArray[np.int64]:
    """Indices of (weak) local maxima of a vector, plateau members included."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 1:
        return np.array([0], dtype=np.int64)
    left = np.empty(len(v), dtype=bool)
    right = np.empty(len(v), dtype=bool)
    left[0] = True
    left[1:] = v[1:] >= v[:-1]
    right[-1] = True
    right[:-1] = v[:-1] >= v[1:]
    return np.flatnonzero(left & right)


def _newton_simplex(A, g, max_inner: int = 100, rel_tol: float = 1e-10):
    """Minimize -sum log(Ag) over the simplex on the current support.

    Newton with an equality multiplier; steps are capped at the boundary and
    coordinates driven to zero are dropped.  If a direction fails to descend
    the ridge escalates, degrading gracefully toward projected gradient.
    """
    p = A.shape[0]
    active = np.flatnonzero(g > 0)
    w = g[active].astype(np.float64)
    w /= w.sum()
    ridge_boost = 1.0
    for _ in range(max_inner):
        B = A[:, active]
        f = np.maximum(B @ w, 1e-300)
        inv_f = 1.0 / f
        grad = -(B.T @ inv_f)
        # stationarity on the support is grad_k = -p for every active atom
        if np.max(np.abs(grad + p)) <= rel_tol * p:
            break
        H = (B * (inv_f * inv_f)[:, None]).T @ B
        k = len(active)
        ridge = ridge_boost * 1e-10 * (np.trace(H) / k + 1.0)
        KKT = np.zeros((k + 1, k + 1))
        KKT[:k, :k] = H + ridge * np.eye(k)
        KKT[:k, k] = 1.0
        KKT[k, :k] = 1.0
        rhs = np.concatenate([-(grad + p), [0.0]])
        try:
            step = np.linalg.solve(KKT, rhs)[:k]
        except np.linalg.LinAlgError:
            ridge_boost *= 1e4
            continue
        negative = step < 0
        if np.any(negative):
            limit = float(np.min(-w[negative] / step[negative]))
            scale0 = min(1.0, limit)
        else:
            limit = np.inf
            scale0 = 1.0
        f0 = -np.sum(np.log(f))
        scale = scale0
        accepted = False
        while scale > 1e-16:
            cand = np.maximum(w + scale * step, 0.0)
            total = cand.sum()
            if total > 0:
                cand /= total
                fc = -np.sum(np.log(np.maximum(B @ cand, 1e-300)))
                if fc < f0:
                    w, accepted = cand, True
                    break
            scale /= 2.0
        if not accepted:
            if ridge_boost < 1e12:
                ridge_boost *= 1e4
                continue
            break
        ridge_boost = 1.0
        keep = w > 1e-16
        if not np.all(keep):
            active = active[keep]
            w = w[keep]
            w /= w.sum()
    out = np.zeros(A.shape[1])
    out[active] = w
    return out


def _fit_weights(A, tol: float, max_iter: int):
    """Full NPMLE weight solve on a fixed grid by support reduction.

    A short EM pass shapes a small starting support (its local maxima);
    weights are then re-optimized by Newton on the working support and every
    local maximum of the violated certificate joins the support, until the
    global first-order condition holds.  Returns ``(weights, gap, rounds,
    converged)`` where ``gap = max_k D_k / p - 1``.
    """
    p, m = A.shape
    g = np.full(m, 1.0 / m)
    for _ in range(50):
        f = np.maximum(A @ g, 1e-300)
        g *= (A.T @ (1.0 / f)) / p
    g /= g.sum()
    support = _local_maxima(g)
    start = np.zeros(m)
    start[support] = g[support]
    if not start.sum() > 0:
        start[np.argmax(g)] = 1.0
    g = start / start.sum()
    gap = np.inf
    for round_no in range(1, max_iter + 1):
        g = _newton_simplex(A, g)
        D = _kkt_gradient(A, g)
        gap = float(D.max() / p - 1.0)
        if gap <= tol:
            return g, gap, round_no, True
        peaks = _local_maxima(D)
        entering = peaks[(D[peaks] > p) & (g[peaks] == 0.0)]
        if len(entering) == 0:
            worst = int(np.argmax(D))
            if g[worst] > 0.0:
                # support already contains the violator: the inner solve is
                # short; refresh with EM so the next Newton starts elsewhere
                for _ in range(100):
                    f = np.maximum(A @ g, 1e-300)
                    g *= (A.T @ (1.0 / f)) / p
                g /= g.sum()
                continue
            entering = np.array([worst])
        seed = min(1e-3, 0.1 / len(entering))
        g *= 1.0 - seed * len(entering)
        g[entering] += seed
    return g, gap, max_iter, False


def fit_npmle(
    observations: GaussianObservations,
    grid: GridSpec | npt.ArrayLike | None = None,
    tol: float = 1e-6,
    max_iter: int = 200,
    prune_tol: float = 1e-10,
) -> MixingDistribution:
    """Maximum likelihood mixing distribution on a fixed grid.

    The first-order optimality certificate ``max_t sum_i phi_i(t) / f(theta_hat_i)
    <= p (1 + tol)`` is enforced over the whole grid; atoms with weight below
    ``prune_tol`` are dropped from the returned distribution.
    """
    mix, _ = _fit_npmle_info(observations, grid, tol, max_iter, prune_tol)
    return mix


def _fit_npmle_info(observations, grid, tol, max_iter, prune_tol):
    check_positive(tol, "tol")
    if grid is None:
        grid = GridSpec()
    if isinstance(grid, GridSpec):
        atoms = grid.build(observations)
    else:
        atoms = as_float_vector(grid, "grid", min_len=1)
        if np.any(np.diff(atoms) <= 0):
            raise ValueError("an explicit grid must be strictly increasing")
    log_k = _log_kernel(observations.theta_hat, observations.sigma_hat, atoms)
    row_shift = log_k.max(axis=1)
    # rescale rows so every observation has kernel max 1: immunizes the solve
    # against tiny noise scales without changing the argmax
    A = np.exp(log_k - row_shift[:, None])
    weights, gap, rounds, converged = _fit_weights(A, tol, max_iter)
    if not converged:
        raise ConvergenceError(
            f"NPMLE certificate gap {gap:.3e} above tol={tol} "
            f"after {rounds} rounds",
            gap=gap,
        )
    keep = weights > prune_tol
    kept = weights[keep] / weights[keep].sum()
    mix = MixingDistribution(atoms=atoms[keep], weights=kept)
    info = {"gap": gap, "rounds": rounds, "grid": atoms, "loglik": mixture_loglik(mix, observations)}
    return mix, info


def posterior_mean(g: MixingDistribution, theta_hat, sigma_hat):
    """Posterior mean abilities E[theta | theta_hat] under the mixture prior."""
    theta_arr = np.atleast_1d(np.asarray(theta_hat, dtype=np.float64))
    sigma_arr = np.broadcast_to(
        np.asarray(sigma_hat, dtype=np.float64), theta_arr.shape
    ).astype(np.float64)
    if np.any(sigma_arr <= 0):
        raise ValueError("sigma_hat must be strictly positive")
    z = (theta_arr[:, None] - g.atoms[None, :]) / sigma_arr[:, None]
    with np.errstate(divide="ignore"):
        log_w = np.log(g.weights)[None, :] - 0.5 * z * z
    log_w -= log_w.max(axis=1, keepdims=True)
    w = np.exp(log_w)
    out = (w @ g.atoms) / w.sum(axis=1)
    return float(out[0]) if np.isscalar(theta_hat) or np.ndim(theta_hat) == 0 else out


def smoothed_posterior_mean(
    g: MixingDistribution, observations: GaussianObservations, bandwidth: float
):
    """Posterior means under the prior G smoothed by a N(0, bandwidth^2) kernel.

    Each atom t of G becomes a Gaussian component: the posterior mean blends
    the per-component conjugate answers ``t + (theta_hat - t) h^2 / (sigma^2 + h^2)``
    with weights proportional to ``g_t phi(theta_hat; t, sigma^2 + h^2)``.
    As bandwidth -> 0 this recovers :func:`posterior_mean`.
    """
    h = float(bandwidth)
    if h < 0 or not np.isfinite(h):
        raise ValueError("bandwidth must be nonnegative and finite")
    theta_arr = observations.theta_hat
    var_total = observations.sigma_hat ** 2 + h * h
    shrink = (h * h) / var_total
    z2 = (theta_arr[:, None] - g.atoms[None, :]) ** 2 / var_total[:, None]
    with np.errstate(divide="ignore"):
        log_w = np.log(g.weights)[None, :] - 0.5 * z2
    log_w -= log_w.max(axis=1, keepdims=True)
    w = np.exp(log_w)
    component_mean = g.atoms[None, :] + (theta_arr[:, None] - g.atoms[None, :]) * shrink[:, None]
    return np.sum(w * component_mean, axis=1) / w.sum(axis=1)


def silverman_bandwidth(theta_hat) -> float:
    """Normal-reference bandwidth 1.06 sd(theta_hat) p^(-1/5)."""
    theta_hat = as_float_vector(theta_hat, "theta_hat", min_len=1)
    p = len(theta_hat)
    if p < 2:
        return 1e-6
    sd = float(np.std(theta_hat, ddof=1))
    if sd == 0.0:
        return 1e-6
    return 1.06 * sd * p ** (-0.2)


def rank_probabilities(
    g: MixingDistribution,
    theta,
    covariance,
    ties: str = "weak",
    variance_floor: float = 1e-10,
) -> npt.NDArray[np.float64]:
    """Pairwise posterior probabilities P(ability_i >= ability_j).

    ``theta`` and ``covariance`` describe the joint Gaussian noise on the
    estimates (deterministic coordinates get zero rows).  Under the discrete
    posterior the tie event ``ability_i == ability_j`` has positive mass;
    ``ties="weak"`` counts it fully for both directions, ``ties="half"``
    splits it so the matrix entries are complementary.

    Singular or near-singular 2x2 covariance blocks (the anchor, perfectly
    correlated pairs) get ``variance_floor`` added to the diagonal.
    """
    if ties not in ("weak", "half"):
        raise ValueError("ties must be 'weak' or 'half'")
    theta = as_float_vector(theta, "theta", min_len=2)
    cov = np.asarray(covariance, dtype=np.float64)
    q = len(theta)
    if cov.shape != (q, q):
        raise ValueError(f"covariance must be ({q}, {q}), got {cov.shape}")
    atoms = g.atoms
    with np.errstate(divide="ignore"):
        log_w = np.log(g.weights)
    upper = atoms[:, None] >= atoms[None, :]
    diag = np.eye(len(atoms), dtype=bool)
    P = np.zeros((q, q))
    for i in range(q):
        for j in range(i + 1, q):
            vi, vj, c = cov[i, i], cov[j, j], cov[i, j]
            det = vi * vj - c * c
            if min(vi, vj) <= variance_floor or det <= variance_floor * max(vi, vj, variance_floor):
                vi += variance_floor
                vj += variance_floor
                det = vi * vj - c * c
            a = vj / det
            b = -c / det
            d = vi / det
            e = theta[i] - atoms
            f = theta[j] - atoms
            quad = (
                a * (e * e)[:, None]
                + 2.0 * b * e[:, None] * f[None, :]
                + d * (f * f)[None, :]
            )
            log_W = log_w[:, None] + log_w[None, :] - 0.5 * quad
            shift = log_W.max()
            W = np.exp(log_W - shift)
            total = W.sum()
            up = W[upper].sum()
            tie_mass = W[diag].sum()
            if ties == "weak":
                P[i, j] = up / total
                P[j, i] = (total - up + tie_mass) / total
            else:
                P[i, j] = (up - 0.5 * tie_mass) / total
                P[j, i] = 1.0 - P[i, j]
    return P


def posterior_mean_ranks(
    g: MixingDistribution,
    fit: FitResult,
    ties: str = "weak",
    variance_floor: float = 1e-10,
) -> npt.NDArray[np.float64]:
    """Posterior expected rank scores: R_i = sum_j P(ability_i >= ability_j).

    Covers every player in the fit including the anchor; higher is better,
    entries lie in [0, n_players - 1] (weak ties can exceed the strict-order
    value because shared atoms count for both players of a pair).
    """
    q = fit.n_players
    cov = np.zeros((q, q))
    if q > 1:
        cov[1:, 1:] = fit.cov
    P = rank_probabilities(g, fit.theta, cov, ties=ties, variance_floor=variance_floor)
    return P.sum(axis=1)


def observations_from_fit(
    fit: FitResult, include_anchor: bool = False, anchor_scale: float = ANCHOR_SCALE
) -> GaussianObservations:
    """Gaussian observations derived from a fit.

    By default only the free players; with ``include_anchor`` the anchor is
    prepended at its fixed value with the (tiny) ``anchor_scale`` noise scale.
    """
    if fit.n_players < 2:
        raise ValueError("need at least two players to build observations")
    if include_anchor:
        return GaussianObservations(
            theta_hat=fit.theta,
            sigma_hat=np.concatenate([[anchor_scale], fit.se]),
        )
    return GaussianObservations(theta_hat=fit.theta[1:], sigma_hat=fit.se)


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-player empirical Bayes summary, aligned with the fit's players."""

    theta_hat: npt.NDArray[np.float64]
    se: npt.NDArray[np.float64]
    post_mean: npt.NDArray[np.float64]
    post_mean_smoothed: npt.NDArray[np.float64]
    post_rank: npt.NDArray[np.float64]
    bandwidth: float
    mixing: MixingDistribution
    labels: tuple[str, ...] | None = None

    def rows(self):
        """Yield per-player rows for tabular export."""
        for k in range(len(self.theta_hat)):
            label = self.labels[k] if self.labels is not None else str(k)
            yield (
                label,
                float(self.theta_hat[k]),
                float(self.se[k]),
                float(self.post_mean[k]),
                float(self.post_mean_smoothed[k]),
                float(self.post_rank[k]),
            )


def posterior_summary(
    fit: FitResult,
    grid: GridSpec | npt.ArrayLike | None = None,
    bandwidth: float | None = None,
    ties: str = "weak",
    anchor_scale: float = ANCHOR_SCALE,
    tol: float = 1e-6,
) -> PosteriorSummary:
    """Fit the mixture on the free players and evaluate all posterior rules.

    The mixing distribution is estimated from the free (non-anchor) players;
    posterior quantities are reported for every player with the anchor
    entering at ``anchor_scale``.  ``bandwidth=None`` selects the normal
    reference rule from the free estimates.
    """
    free = observations_from_fit(fit, include_anchor=False)
    g = fit_npmle(free, grid=grid, tol=tol)
    everyone = observations_from_fit(fit, include_anchor=True, anchor_scale=anchor_scale)
    h = silverman_bandwidth(free.theta_hat) if bandwidth is None else float(bandwidth)
    return PosteriorSummary(
        theta_hat=everyone.theta_hat,
        se=everyone.sigma_hat,
        post_mean=posterior_mean(g, everyone.theta_hat, everyone.sigma_hat),
        post_mean_smoothed=smoothed_posterior_mean(g, everyone, h),
        post_rank=posterior_mean_ranks(g, fit, ties=ties),
        bandwidth=h,
        mixing=g,
        labels=fit.labels,
    )


class KieferWolfowitz(BaseEstimator):
    """Grid NPMLE for Gaussian location mixtures, scikit-learn style.

    Parameters
    ----------
    n_grid : int
        Number of equally spaced support atoms.
    padding : float
        Grid margin in units of the largest noise scale.
    tol : float
        Relative first-order certificate tolerance.
    max_iter : int
        Outer round budget for the solver.

    Attributes
    ----------
    mixing_ : MixingDistribution
    atoms_, weights_ : support and weights of the fitted mixture
    grid_ : the full candidate grid
    kkt_gap_ : certificate gap at the solution
    loglik_ : marginal log-likelihood at the solution
    """

    def __init__(self, n_grid: int = 301, padding: float = 3.0,
                 tol: float = 1e-6, max_iter: int = 200):
        self.n_grid = n_grid
        self.padding = padding
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, theta_hat, sigma_hat):
        obs = GaussianObservations(
            np.asarray(theta_hat, dtype=np.float64),
            np.asarray(sigma_hat, dtype=np.float64),
        )
        grid = GridSpec(n_points=self.n_grid, padding=self.padding)
        self.mixing_, info = _fit_npmle_info(obs, grid, self.tol, self.max_iter, 1e-10)
        self.atoms_ = self.mixing_.atoms
        self.weights_ = self.mixing_.weights
        self.grid_ = info["grid"]
        self.kkt_gap_ = info["gap"]
        self.loglik_ = info["loglik"]
        return self

    def predict(self, theta_hat, sigma_hat):
        """Posterior mean abilities for new estimate/scale pairs."""
        check_is_fitted(self, "mixing_")
        return posterior_mean(self.mixing_, theta_hat, sigma_hat)

    def marginal_density(self, theta_hat, sigma_hat):
        check_is_fitted(self, "mixing_")
        return marginal_density(self.mixing_, theta_hat, sigma_hat)
