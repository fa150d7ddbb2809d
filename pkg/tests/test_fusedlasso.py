"""Fused-penalty solver, certificate, path, and BIC selection.

The solver is validated against an independent convex-programming solution
(cvxpy) at matched penalty levels, the certificate against hand-perturbed
points, and the path against cold-started per-level fits.
"""

import numpy as np
import pytest

cp = pytest.importorskip("cvxpy")

from pairrank.btmle import fit_mle, log_likelihood
from pairrank.comparisons import aggregate
from pairrank.exceptions import DivergenceError
from pairrank.fusedlasso import (
    GroupedBradleyTerry,
    LassoOptions,
    LassoPath,
    LassoSolution,
    bic,
    default_lambda_grid,
    extract_groups,
    fit_penalized,
    penalty,
    select_lambda,
    solve_path,
    subgradient_certificate,
)

from conftest import random_dataset


def penalty_oracle(v):
    return sum(abs(v[i] - v[j]) for i in range(len(v)) for j in range(i + 1, len(v)))


class TestPenalty:
    def test_matches_double_loop(self, rng):
        for _ in range(10):
            v = rng.normal(size=int(rng.integers(1, 9)))
            assert penalty(v) == pytest.approx(penalty_oracle(v), abs=1e-12)

    def test_degenerate_inputs(self):
        assert penalty(np.array([3.0])) == 0.0
        assert penalty(np.array([1.0, 1.0, 1.0])) == 0.0


class TestExtractGroups:
    def test_distinct_values_stay_apart(self):
        groups = extract_groups(np.array([0.0, 2.0, 1.0]), tol=1e-6)
        assert groups == ((1,), (2,), (0,))

    def test_close_values_merge(self):
        groups = extract_groups(np.array([0.0, 5e-7, 1.0]), tol=1e-6)
        assert groups == ((2,), (0, 1))

    def test_single_linkage_chains(self):
        # consecutive gaps both inside tol merge transitively
        groups = extract_groups(np.array([0.0, 8e-7, 1.6e-6]), tol=1e-6)
        assert groups == ((0, 1, 2),)

    def test_members_sorted_within_group(self):
        groups = extract_groups(np.array([1.0, 0.0, 1.0 + 1e-9]), tol=1e-6)
        assert groups == ((0, 2), (1,))

    def test_negative_tol_rejected(self):
        with pytest.raises(ValueError, match="tol"):
            extract_groups(np.array([0.0, 1.0]), tol=-1.0)


def solve_with_cvxpy(ds, lam):
    theta = cp.Variable(ds.n_players)
    terms = []
    for i, j, n, w in ds.pairs():
        d = theta[i] - theta[j]
        terms.append(w * d - n * cp.logistic(d))
    pen = cp.sum(
        [cp.abs(theta[i] - theta[j])
         for i in range(ds.n_players) for j in range(i + 1, ds.n_players)]
    )
    problem = cp.Problem(cp.Maximize(cp.sum(terms) - lam * pen), [theta[0] == 0])
    problem.solve(solver=cp.CLARABEL)
    assert problem.status == cp.OPTIMAL
    return -problem.value, np.asarray(theta.value)


def objective(theta, ds, lam):
    return -log_likelihood(theta, ds) + lam * penalty_oracle(theta)


class TestFitPenalized:
    def test_zero_penalty_is_the_mle(self, rng):
        ds = random_dataset(rng, 6)
        sol = fit_penalized(ds, 0.0)
        mle = fit_mle(ds)
        assert np.allclose(sol.theta, mle.theta, atol=1e-8)
        assert np.array_equal(np.argsort(sol.alpha), np.argsort(mle.theta))
        assert sol.lam == 0.0 and sol.certificate <= 1e-8

    def test_huge_penalty_pools_everyone(self, rng):
        ds = random_dataset(rng, 6)
        lam_top = default_lambda_grid(ds, n_points=3)[-1]
        sol = fit_penalized(ds, lam_top)
        assert sol.k == 1
        assert sol.groups == (tuple(range(6)),)
        assert np.allclose(sol.alpha, 1.0)

    def test_objective_not_worse_than_cvxpy(self, rng):
        for _ in range(3):
            ds = random_dataset(rng, 5, mean_matches=5.0)
            grid = default_lambda_grid(ds, n_points=5)
            for lam in (grid[2], grid[-2]):
                sol = fit_penalized(ds, lam)
                cvx_obj, _ = solve_with_cvxpy(ds, lam)
                assert objective(sol.theta, ds, lam) <= cvx_obj + 1e-5
                assert sol.certificate <= 1e-6

    def test_separated_data_is_fittable_once_penalized(self):
        # player 0 never loses: the MLE diverges but any positive penalty
        # caps the ratings
        ds = aggregate([(0, 1, 1)] * 4 + [(1, 2, 1), (1, 2, 0), (0, 2, 1)], 3)
        sol = fit_penalized(ds, 0.2)
        assert np.all(np.isfinite(sol.theta))
        assert sol.certificate <= 1e-6
        with pytest.raises(DivergenceError):
            fit_penalized(ds, 0.0)

    def test_negative_penalty_rejected(self, rng):
        with pytest.raises(ValueError, match="lam"):
            fit_penalized(random_dataset(rng, 3), -0.5)

    def test_solution_reports_its_own_bic(self, rng):
        ds = random_dataset(rng, 5)
        sol = fit_penalized(ds, 0.1)
        n_total = int(ds.n_matches.sum())
        assert sol.bic == pytest.approx(-2.0 * sol.loglik + sol.k * np.log(n_total))
        assert bic(sol, n_total) == pytest.approx(sol.bic)


class TestCertificate:
    def test_small_at_solutions_large_nearby(self, rng):
        ds = random_dataset(rng, 6)
        sol = fit_penalized(ds, 0.3)
        at_opt = subgradient_certificate(sol.theta, ds, 0.3)
        assert at_opt <= 1e-6
        perturbed = sol.theta + np.concatenate([[0.0], 0.05 * rng.normal(size=5)])
        assert subgradient_certificate(perturbed, ds, 0.3) > 100 * at_opt

    def test_zero_penalty_reduces_to_the_gradient_norm(self, rng):
        ds = random_dataset(rng, 5)
        mle = fit_mle(ds)
        assert subgradient_certificate(mle.theta, ds, 0.0) <= 1e-8

    def test_input_validation(self, rng):
        ds = random_dataset(rng, 4)
        with pytest.raises(ValueError, match="entries"):
            subgradient_certificate(np.zeros(3), ds, 0.1)
        with pytest.raises(ValueError, match="nonnegative"):
            subgradient_certificate(np.zeros(4), ds, -0.1)


class TestSolvePath:
    def test_coarse_path_against_cold_starts(self, rng):
        ds = random_dataset(rng, 6, mean_matches=8.0)
        lams = np.arange(0.0, 10.5, 0.5)
        path = solve_path(ds, lams)
        assert len(path) == 21
        assert np.array_equal(path.lambdas, lams)
        ks = [sol.k for sol in path]
        assert all(b <= a for a, b in zip(ks, ks[1:]))
        assert ks[0] == 6 and ks[-1] == 1
        for sol in (path.solutions[0], path.solutions[4], path.solutions[-1]):
            cold = fit_penalized(ds, sol.lam)
            assert cold.k == sol.k
            assert np.allclose(cold.theta, sol.theta, atol=1e-4)

    def test_top_player_keeps_the_lead_while_unmerged(self, rng):
        ds = random_dataset(rng, 7, mean_matches=8.0)
        path = solve_path(ds)
        top = int(np.argmax(path.solutions[0].alpha))
        seen_alone = 0
        for sol in path:
            if (top,) in sol.groups:
                seen_alone += 1
                assert sol.alpha[top] == sol.alpha.max()
        assert seen_alone > 0

    def test_grid_validation(self, rng):
        ds = random_dataset(rng, 4)
        with pytest.raises(ValueError, match="increasing"):
            solve_path(ds, np.array([0.0, 1.0, 1.0]))
        with pytest.raises(ValueError, match="nonnegative"):
            solve_path(ds, np.array([-1.0, 1.0]))


class TestDefaultLambdaGrid:
    def test_shape_and_structure(self, rng):
        ds = random_dataset(rng, 6)
        grid = default_lambda_grid(ds, n_points=21)
        assert len(grid) == 21
        assert grid[0] == 0.0
        ratios = grid[2:] / grid[1:-1]
        assert np.allclose(ratios, ratios[0])
        assert grid[1] == pytest.approx(1e-3 * grid[-1])

    def test_top_of_grid_collapses(self, rng):
        ds = random_dataset(rng, 5)
        grid = default_lambda_grid(ds, n_points=4)
        assert fit_penalized(ds, grid[-1]).k == 1

    def test_too_few_points_rejected(self, rng):
        with pytest.raises(ValueError, match="grid"):
            default_lambda_grid(random_dataset(rng, 3), n_points=1)


def make_solution(lam, bic_value, k=1):
    groups = tuple((i,) for i in range(k))
    return LassoSolution(
        lam=lam, alpha=np.exp(np.arange(k, dtype=float)), groups=groups,
        loglik=-1.0, k=k, bic=bic_value, certificate=0.0,
    )


class TestSelectLambda:
    def test_minimum_bic_wins(self):
        path = LassoPath((make_solution(0.0, 10.0, 3),
                          make_solution(1.0, 4.0, 2),
                          make_solution(2.0, 7.0, 1)))
        assert select_lambda(path).lam == 1.0

    def test_ties_resolve_to_the_larger_penalty(self):
        path = LassoPath((make_solution(0.0, 5.0, 2), make_solution(1.0, 5.0, 1)))
        assert select_lambda(path).lam == 1.0

    def test_increasing_bic_selects_the_first_entry(self):
        path = LassoPath((make_solution(0.0, 1.0, 3),
                          make_solution(1.0, 2.0, 2),
                          make_solution(2.0, 3.0, 1)))
        assert select_lambda(path).lam == 0.0

    def test_empty_path_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            select_lambda(LassoPath(()))

    def test_path_select_is_an_alias(self):
        path = LassoPath((make_solution(0.0, 9.0, 2), make_solution(1.0, 3.0, 1)))
        assert path.select() is select_lambda(path)


class TestTypes:
    def test_solution_group_count_checked(self):
        with pytest.raises(ValueError, match="number of groups"):
            LassoSolution(lam=0.0, alpha=np.ones(2), groups=((0,), (1,)),
                          loglik=0.0, k=1, bic=0.0, certificate=0.0)

    def test_solution_groups_must_partition(self):
        with pytest.raises(ValueError, match="partition"):
            LassoSolution(lam=0.0, alpha=np.ones(2), groups=((0,), (0,)),
                          loglik=0.0, k=2, bic=0.0, certificate=0.0)

    def test_theta_is_log_alpha(self):
        sol = make_solution(0.5, 1.0, 3)
        assert np.allclose(sol.theta, np.log(sol.alpha))

    def test_path_lambdas_strictly_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            LassoPath((make_solution(1.0, 1.0), make_solution(1.0, 2.0)))

    def test_options_validated(self):
        with pytest.raises(ValueError):
            LassoOptions(cert_tol=0.0)
        with pytest.raises(ValueError):
            LassoOptions(max_rounds=0)


class TestEstimatorApi:
    def test_fit_selects_by_bic(self, rng):
        ds = random_dataset(rng, 5, mean_matches=8.0)
        est = GroupedBradleyTerry(n_lambdas=11).fit(ds)
        assert est.selected_ is est.path_.select()
        assert est.k_ == est.selected_.k
        assert est.lambda_ == est.selected_.lam
        assert np.array_equal(est.alpha_, est.selected_.alpha)

    def test_explicit_grid_passthrough(self, rng):
        ds = random_dataset(rng, 4)
        est = GroupedBradleyTerry(lambdas=[0.0, 0.5, 2.0]).fit(ds)
        assert np.array_equal(est.path_.lambdas, [0.0, 0.5, 2.0])

    def test_predict_proba_uses_selected_ratings(self, rng):
        ds = random_dataset(rng, 4)
        est = GroupedBradleyTerry(n_lambdas=5).fit(ds)
        probs = est.predict_proba(np.array([[0, 1], [2, 3]]))
        d = est.selected_.theta
        assert probs[0] == pytest.approx(1.0 / (1.0 + np.exp(-(d[0] - d[1]))))

    def test_requires_fit(self):
        with pytest.raises(Exception):
            GroupedBradleyTerry().predict_proba(np.array([[0, 1]]))
