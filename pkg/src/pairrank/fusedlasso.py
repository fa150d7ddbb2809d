"""Grouped ratings via an all-pairs fused-lasso penalty on Bradley-Terry fits.

Solves ``min_theta -loglik(theta) + lam * sum_{i<j} |theta_i - theta_j|`` on
the mean-zero gauge.  Increasing ``lam`` collapses the log-ratings into fewer
distinct levels; BIC over the number of levels picks a working resolution.

The solver is a homotopy in ``lam``: reduced Newton steps on the current
group values (the penalty is linear while the group order is strict, and
groups merge when a gap closes), safeguarded by proximal-gradient sweeps.
The prox of the all-pairs penalty is exact: sort, shift by the penalty's
sorted subgradient, project onto the monotone cone.  Every reported solution
carries an LP-verified bound on the norm of the smallest subgradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.optimize import isotonic_regression, linprog
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import as_float_vector
from .btmle import (
    SolverOptions,
    fisher_information,
    fit_mle,
    log_likelihood,
    score_vector,
)
from .comparisons import ComparisonDataset, as_comparison_dataset, matches_played
from .exceptions import ConvergenceError, DivergenceError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LassoOptions:
    """Controls for the penalized solver.

    ``cert_tol`` bounds the LP subgradient certificate at accepted solutions;
    ``grouping_tol`` is the gap below which ratings are reported as one group
    (absolute on the log scale, so roughly relative on the rating scale).
    """

    cert_tol: float = 1e-6
    grouping_tol: float = 1e-6
    max_rounds: int = 40
    fista_block: int = 400
    homotopy_steps: int = 8
    mle_options: SolverOptions = SolverOptions()

    def __post_init__(self):
        if self.cert_tol <= 0 or self.grouping_tol < 0:
            raise ValueError("cert_tol must be positive, grouping_tol nonnegative")
        if self.max_rounds < 1 or self.fista_block < 1 or self.homotopy_steps < 0:
            raise ValueError("iteration budgets must be positive")


@dataclass(frozen=True)
class LassoSolution:
    """One point on the regularization path.

    ``alpha`` is on the multiplicative scale with the anchor at 1; ``groups``
    lists player indices per rating level, best level first; ``certificate``
    is the verified bound on the smallest subgradient's max-norm.
    """

    lam: float
    alpha: npt.NDArray[np.float64]
    groups: tuple[tuple[int, ...], ...]
    loglik: float
    k: int
    bic: float
    certificate: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64).copy()
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(
            self, "groups", tuple(tuple(int(i) for i in grp) for grp in self.groups)
        )
        if self.k != len(self.groups):
            raise ValueError("k must equal the number of groups")
        members = sorted(i for grp in self.groups for i in grp)
        if members != list(range(len(alpha))):
            raise ValueError("groups must partition the players")

    @property
    def theta(self) -> npt.NDArray[np.float64]:
        """Log-ratings, anchored at player 0."""
        return np.log(self.alpha)


@dataclass(frozen=True)
class LassoPath:
    """Solutions at increasing penalty levels."""

    solutions: tuple[LassoSolution, ...]

    def __post_init__(self):
        object.__setattr__(self, "solutions", tuple(self.solutions))
        lams = [s.lam for s in self.solutions]
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("path lambdas must be strictly increasing")

    def __iter__(self):
        return iter(self.solutions)

    def __len__(self):
        return len(self.solutions)

    @property
    def lambdas(self) -> npt.NDArray[np.float64]:
        return np.array([s.lam for s in self.solutions])

    def select(self) -> LassoSolution:
        return select_lambda(self)


def penalty(values) -> float:
    """All-pairs fused penalty ``sum_{i<j} |v_i - v_j|``."""
    v = np.sort(as_float_vector(values, "values"))
    m = len(v)
    if m < 2:
        return 0.0
    coef = 2.0 * np.arange(m) - (m - 1)
    return float(coef @ v)


def _prox_penalty(v, step):
    """Exact prox of ``step * penalty`` at ``v``.

    On the descending sort the penalty's subgradient is the fixed vector
    m-2i+1 while the order holds, so the prox is the isotonic (non-increasing)
    projection of the shifted sorted vector; pooling handles every merge.
    """
    m = len(v)
    if m < 2 or step == 0.0:
        return np.asarray(v, dtype=np.float64)
    order = np.argsort(-v, kind="stable")
    ranks = np.arange(1, m + 1)
    shifted = v[order] - step * (m - 2.0 * ranks + 1.0)
    fitted = isotonic_regression(shifted, increasing=False).x
    out = np.empty(m)
    out[order] = fitted
    return out


def _partition(values, tol):
    """Single-linkage grouping of coordinates, best value first."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(-values, kind="stable")
    groups = [[int(order[0])]]
    for prev, nxt in zip(order, order[1:]):
        if values[prev] - values[nxt] <= tol:
            groups[-1].append(int(nxt))
        else:
            groups.append([int(nxt)])
    return groups


def extract_groups(values, tol: float = 1e-6) -> tuple[tuple[int, ...], ...]:
    """Group coordinates whose sorted gaps are within ``tol``, best first.

    Single-linkage: a chain of small gaps merges transitively.  Members are
    listed in ascending player order inside each group.
    """
    values = as_float_vector(values, "values", min_len=1)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return tuple(tuple(sorted(grp)) for grp in _partition(values, tol))


def _group_ids(groups, n):
    gid = np.full(n, -1, dtype=np.int64)
    for a, grp in enumerate(groups):
        gid[list(grp)] = a
    return gid


def subgradient_certificate(
    theta,
    dataset: ComparisonDataset,
    lam: float,
    groups=None,
    grouping_tol: float = 1e-12,
) -> float:
    """Verified max-norm of the smallest subgradient of the objective at theta.

    Signs of separated pairs are fixed; the subgradients of tied pairs (same
    group) are free in [-1, 1] and chosen by a linear program to minimize the
    largest coordinate of the residual.  A value within tolerance certifies
    optimality, since the objective is convex.
    """
    theta = as_float_vector(theta, "theta", min_len=1)
    n = dataset.n_players
    if len(theta) != n:
        raise ValueError(f"theta has {len(theta)} entries for {n} players")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    grad = -score_vector(theta, dataset)
    if lam == 0.0 or n == 1:
        return float(np.max(np.abs(grad)))
    if groups is None:
        groups = _partition(theta, grouping_tol)
    gid = _group_ids(groups, n)
    sizes = np.array([len(grp) for grp in groups], dtype=np.float64)
    above = np.cumsum(sizes) - sizes
    below = sizes.sum() - sizes - above
    # separated pairs contribute a fixed sign: +1 against every player below,
    # -1 against every player above (groups are ordered best first)
    fixed = lam * (below[gid] - above[gid])
    residual = grad + fixed
    free_pairs = [
        (a, b)
        for grp in groups
        if len(grp) > 1
        for idx, a in enumerate(grp)
        for b in grp[idx + 1:]
    ]
    if not free_pairs:
        return float(np.max(np.abs(residual)))
    F = len(free_pairs)
    incidence = np.zeros((n, F))
    for col, (a, b) in enumerate(free_pairs):
        incidence[a, col] = 1.0
        incidence[b, col] = -1.0
    # min t  s.t.  -t <= residual + lam * incidence @ s <= t,  s in [-1, 1]
    cost = np.zeros(F + 1)
    cost[-1] = 1.0
    block = lam * incidence
    a_ub = np.block([[block, -np.ones((n, 1))], [-block, -np.ones((n, 1))]])
    b_ub = np.concatenate([-residual, residual])
    bounds = [(-1.0, 1.0)] * F + [(0.0, None)]
    result = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not result.success:
        raise ConvergenceError(f"certificate LP failed: {result.message}")
    return float(result.fun)


def _objective(theta, dataset, lam):
    return -log_likelihood(theta, dataset) + lam * penalty(theta)


def _expand(mu, groups, n):
    theta = np.empty(n)
    for value, grp in zip(mu, groups):
        theta[list(grp)] = value
    return theta


def _newton_on_partition(dataset, groups, mu, lam, max_iter=60):
    """Minimize the objective restricted to the given level partition.

    ``mu`` holds strictly decreasing group values on the mean-zero gauge.
    While the order is strict the penalty is linear, so plain Newton steps on
    the group values apply; when a line search closes a gap the two groups
    merge and iteration continues on the coarser partition.
    """
    n = dataset.n_players
    groups = [list(grp) for grp in groups]
    mu = np.asarray(mu, dtype=np.float64).copy()
    for _ in range(max_iter):
        sizes = np.array([len(grp) for grp in groups], dtype=np.float64)
        total = sizes.sum()
        above = np.cumsum(sizes) - sizes
        below = total - sizes - above
        theta = _expand(mu, groups, n)
        grad_full = -score_vector(theta, dataset)
        grad = np.array([grad_full[grp].sum() for grp in groups])
        grad += lam * sizes * (below - above)
        k = len(groups)
        if k == 1:
            break
        membership = np.zeros((n, k))
        for a, grp in enumerate(groups):
            membership[grp, a] = 1.0
        hess = membership.T @ fisher_information(theta, dataset) @ membership
        ridge = 1e-12 * (np.trace(hess) / k + 1.0)
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = hess + ridge * np.eye(k)
        kkt[:k, k] = sizes
        kkt[k, :k] = sizes
        rhs = np.concatenate([-grad, [0.0]])
        try:
            step = np.linalg.solve(kkt, rhs)[:k]
        except np.linalg.LinAlgError:
            kkt[:k, :k] += 1e-8 * np.eye(k)
            step = np.linalg.solve(kkt, rhs)[:k]
        if np.max(np.abs(step)) <= 1e-13 * (1.0 + np.max(np.abs(mu))):
            break
        gaps = mu[:-1] - mu[1:]
        closing = step[:-1] - step[1:]
        shrinking = closing < 0
        if np.any(shrinking):
            t_max = float(np.min(gaps[shrinking] / -closing[shrinking]))
        else:
            t_max = np.inf
        current = _objective(theta, dataset, lam)
        scale = min(1.0, t_max)
        accepted = False
        while scale > 1e-14:
            cand = mu + scale * step
            value = _objective(_expand(cand, groups, n), dataset, lam)
            if value < current:
                accepted = True
                break
            scale /= 2.0
        if not accepted:
            break
        mu = cand
        gap_scale = 1e-11 * (1.0 + np.max(np.abs(mu)))
        if np.any(mu[:-1] - mu[1:] <= gap_scale):
            merged_groups = [groups[0]]
            merged_mu = [mu[0]]
            for value, grp in zip(mu[1:], groups[1:]):
                if merged_mu[-1] - value <= gap_scale:
                    weight = len(merged_groups[-1])
                    merged_mu[-1] = (weight * merged_mu[-1] + len(grp) * value) / (
                        weight + len(grp)
                    )
                    merged_groups[-1] = merged_groups[-1] + grp
                else:
                    merged_groups.append(grp)
                    merged_mu.append(value)
            groups = merged_groups
            mu = np.array(merged_mu)
        # keep the gauge exact against float drift
        sizes = np.array([len(grp) for grp in groups], dtype=np.float64)
        mu -= (sizes @ mu) / sizes.sum()
    return groups, mu


def _fista(theta, dataset, lam, n_iter):
    """Proximal-gradient safeguard with momentum and adaptive restart."""
    lipschitz = 0.5 * float(matches_played(dataset).max()) + 1e-12
    x = theta.copy()
    y = theta.copy()
    momentum = 1.0
    for _ in range(n_iter):
        grad = -score_vector(y, dataset)
        x_new = _prox_penalty(y - grad / lipschitz, lam / lipschitz)
        momentum_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum * momentum))
        direction = x_new - x
        if (y - x_new) @ direction > 0:
            momentum_new = 1.0
            y = x_new.copy()
        else:
            y = x_new + ((momentum - 1.0) / momentum_new) * direction
        x = x_new
        momentum = momentum_new
    return x - x.mean()


def _solve_at_lambda(theta, dataset, lam, opts):
    """Drive one penalty level to a certified optimum from a warm start."""
    n = dataset.n_players
    probe = theta - theta.mean()
    best_theta = probe
    best_value = _objective(probe, dataset, lam)
    ladder = sorted({1e-12, 1e-9, opts.grouping_tol, 1e-4, 1e-3})
    for _ in range(opts.max_rounds):
        seen = set()
        for eps in ladder:
            groups = _partition(probe, eps)
            key = tuple(tuple(sorted(grp)) for grp in groups)
            if key in seen:
                continue
            seen.add(key)
            sizes = np.array([len(grp) for grp in groups], dtype=np.float64)
            mu = np.array([probe[grp].mean() for grp in groups])
            mu -= (sizes @ mu) / sizes.sum()
            # strictly decreasing start: collapse accidental exact ties
            keep_groups, keep_mu = [groups[0]], [mu[0]]
            for value, grp in zip(mu[1:], groups[1:]):
                if keep_mu[-1] - value <= 0:
                    keep_groups[-1] = keep_groups[-1] + grp
                else:
                    keep_groups.append(grp)
                    keep_mu.append(value)
            out_groups, out_mu = _newton_on_partition(
                dataset, keep_groups, np.array(keep_mu), lam
            )
            cand = _expand(out_mu, out_groups, n)
            value = _objective(cand, dataset, lam)
            if value < best_value:
                best_theta, best_value = cand, value
            cert = subgradient_certificate(cand, dataset, lam, groups=out_groups)
            if cert <= opts.cert_tol:
                return cand, [list(grp) for grp in out_groups], cert
        # certification failed on every polish: move the probe by proximal
        # sweeps from the best point so the next round sees a new partition
        probe = _fista(best_theta, dataset, lam, opts.fista_block)
        value = _objective(probe, dataset, lam)
        if value < best_value:
            best_theta, best_value = probe, value
    raise ConvergenceError(
        f"penalized solver missed cert_tol={opts.cert_tol} at lam={lam}"
    )


def _base_start(dataset, lam, opts):
    """Mean-zero warm start: the exact MLE when it exists."""
    try:
        mle = fit_mle(dataset, opts.mle_options)
    except DivergenceError:
        if lam == 0.0:
            raise
        return None
    return mle.theta - mle.theta.mean()


def _build_solution(theta, cert, dataset, lam, opts):
    theta = theta - theta[0]
    reported = extract_groups(theta, opts.grouping_tol)
    k = len(reported)
    loglik = log_likelihood(theta, dataset)
    return LassoSolution(
        lam=float(lam),
        alpha=np.exp(theta),
        groups=reported,
        loglik=loglik,
        k=k,
        bic=-2.0 * loglik + k * np.log(dataset.total_matches),
        certificate=float(cert),
    )


def _trivial_solution(dataset, lam):
    loglik = log_likelihood(np.zeros(1), dataset)
    return LassoSolution(
        lam=float(lam), alpha=np.ones(1), groups=((0,),), loglik=loglik,
        k=1, bic=-2.0 * loglik + np.log(max(dataset.total_matches, 1)),
        certificate=0.0,
    )


def fit_penalized(
    dataset: ComparisonDataset, lam: float, options: LassoOptions | None = None
) -> LassoSolution:
    """Solve the fused-penalized fit at one penalty level.

    Warm-started through an internal geometric ladder from the MLE (or from
    the all-equal point when the MLE diverges and ``lam > 0``).
    """
    opts = options or LassoOptions()
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError("lam must be finite and nonnegative")
    if dataset.n_players == 1:
        return _trivial_solution(dataset, lam)
    base = _base_start(dataset, lam, opts)
    if lam == 0.0:
        cert = subgradient_certificate(base, dataset, 0.0)
        return _build_solution(base, cert, dataset, 0.0, opts)
    theta = base if base is not None else np.zeros(dataset.n_players)
    ladder = lam * 2.0 ** (-np.arange(opts.homotopy_steps, -1, -1.0))
    cert = np.inf
    for level in ladder:
        theta, _, cert = _solve_at_lambda(theta, dataset, level, opts)
    return _build_solution(theta, cert, dataset, lam, opts)


def solve_path(
    dataset: ComparisonDataset,
    lambdas=None,
    options: LassoOptions | None = None,
) -> LassoPath:
    """Solve the path over increasing penalties with warm starts.

    ``lambdas=None`` uses :func:`default_lambda_grid`.  The group count is
    expected to be non-increasing along the path; violations are logged, not
    raised, since ties near merge points can flicker at tolerance level.
    """
    opts = options or LassoOptions()
    if lambdas is None:
        lambdas = default_lambda_grid(dataset, options=opts)
    lams = as_float_vector(lambdas, "lambdas", min_len=1)
    if np.any(lams < 0):
        raise ValueError("lambdas must be nonnegative")
    if np.any(np.diff(lams) <= 0):
        raise ValueError("lambdas must be strictly increasing")
    if dataset.n_players == 1:
        return LassoPath(tuple(_trivial_solution(dataset, lam) for lam in lams))
    solutions = []
    theta = None
    for lam in lams:
        if lam == 0.0:
            base = _base_start(dataset, 0.0, opts)
            cert = subgradient_certificate(base, dataset, 0.0)
            solutions.append(_build_solution(base, cert, dataset, 0.0, opts))
            theta = base
            continue
        if theta is None:
            start = _base_start(dataset, lam, opts)
            theta = start if start is not None else np.zeros(dataset.n_players)
        try:
            theta, _, cert = _solve_at_lambda(theta, dataset, lam, opts)
        except ConvergenceError as exc:
            raise ConvergenceError(f"path point lam={lam}: {exc}", gap=exc.gap) from exc
        solutions.append(_build_solution(theta, cert, dataset, lam, opts))
    increases = [
        (prev, nxt)
        for prev, nxt in zip(solutions, solutions[1:])
        if nxt.k > prev.k
    ]
    if increases:
        # merging is expected to be monotone; grouping at the reporting
        # tolerance can jitter where the path is nearly flat
        worst = max(increases, key=lambda pair: pair[1].k - pair[0].k)
        logger.warning(
            "group count increased at %d of %d path steps "
            "(largest: k=%d at lam=%g -> k=%d at lam=%g)",
            len(increases), len(solutions) - 1,
            worst[0].k, worst[0].lam, worst[1].k, worst[1].lam,
        )
    return LassoPath(tuple(solutions))


def _full_collapse_lambda(dataset: ComparisonDataset) -> float:
    """Smallest penalty at which the all-equal fit is optimal.

    At the all-equal point the optimality condition asks for a feasible
    routing of the score vector over the complete graph with per-pair
    capacity lam; by the cut condition the binding subsets are prefixes of
    the sorted scores.
    """
    n = dataset.n_players
    if n < 2:
        return 1.0
    grad = -score_vector(np.zeros(n), dataset)
    cum = np.cumsum(np.sort(grad)[::-1])[:-1]
    k = np.arange(1, n, dtype=np.float64)
    value = float(np.max(cum / (k * (n - k))))
    return value if value > 0 else 1.0


def default_lambda_grid(
    dataset: ComparisonDataset,
    n_points: int = 51,
    span: float = 1e-3,
    options: LassoOptions | None = None,
) -> npt.NDArray[np.float64]:
    """Zero plus log-spaced penalties up to the full-collapse level.

    The closed-form collapse level is verified by solving; if grouping
    tolerances leave more than one level the bound is doubled until a single
    group remains.
    """
    if n_points < 2:
        raise ValueError("need at least 2 grid points")
    opts = options or LassoOptions()
    lam_max = _full_collapse_lambda(dataset)
    for _ in range(12):
        if fit_penalized(dataset, lam_max, opts).k == 1:
            break
        lam_max *= 2.0
    else:
        raise ConvergenceError("could not bracket the full-collapse penalty")
    return np.concatenate([[0.0], np.geomspace(span * lam_max, lam_max, n_points - 1)])


def bic(solution: LassoSolution, n_total: int) -> float:
    """Bayesian information criterion: ``-2 loglik + k log(n_total)``."""
    if n_total < 1:
        raise ValueError("n_total must be at least 1")
    return -2.0 * solution.loglik + solution.k * float(np.log(n_total))


def select_lambda(path: LassoPath) -> LassoSolution:
    """The path point with smallest BIC; ties go to the larger penalty."""
    if not len(path):
        raise ValueError("cannot select from an empty path")
    best = path.solutions[0]
    for sol in path.solutions[1:]:
        if sol.bic <= best.bic:
            best = sol
    return best


class GroupedBradleyTerry(BaseEstimator):
    """Bradley-Terry ratings with fused grouping, scikit-learn style.

    Fits the whole path and keeps the BIC-selected solution.

    Parameters
    ----------
    lambdas : array-like or None
        Penalty grid; ``None`` builds the default grid from the data.
    n_lambdas : int
        Grid size when ``lambdas`` is ``None``.
    cert_tol, grouping_tol : float
        Solver certificate and group-reporting tolerances.

    Attributes
    ----------
    path_ : LassoPath
    selected_ : LassoSolution
    alpha_, groups_, k_, lambda_, bic_ : selected-solution aliases
    """

    def __init__(self, lambdas=None, n_lambdas: int = 51,
                 cert_tol: float = 1e-6, grouping_tol: float = 1e-6):
        self.lambdas = lambdas
        self.n_lambdas = n_lambdas
        self.cert_tol = cert_tol
        self.grouping_tol = grouping_tol

    def fit(self, X, y=None):
        dataset = as_comparison_dataset(X)
        opts = LassoOptions(cert_tol=self.cert_tol, grouping_tol=self.grouping_tol)
        if self.lambdas is None:
            grid = default_lambda_grid(dataset, n_points=self.n_lambdas, options=opts)
        else:
            grid = np.asarray(self.lambdas, dtype=np.float64)
        self.path_ = solve_path(dataset, grid, options=opts)
        self.selected_ = self.path_.select()
        self.alpha_ = self.selected_.alpha
        self.groups_ = self.selected_.groups
        self.k_ = self.selected_.k
        self.lambda_ = self.selected_.lam
        self.bic_ = self.selected_.bic
        return self

    def predict_proba(self, pairs):
        """Win probability of the first player in each ``(i, j)`` row."""
        check_is_fitted(self, "selected_")
        arr = np.asarray(pairs, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("pairs must be an (m, 2) array of player indices")
        theta = self.selected_.theta
        if arr.size and (arr.min() < 0 or arr.max() >= len(theta)):
            raise ValueError("player index out of range")
        a = theta[arr[:, 0]]
        b = theta[arr[:, 1]]
        return 1.0 / (1.0 + np.exp(-(a - b)))
