"""Top-level acceptance gate: one test per release criterion.

Each test is self-contained, pins its tolerances inline, enforces its time
budget, and prints one summary line with the measured numbers.  The three
simulation criteria run their shipped presets through the CLI exactly as a
user would, twice each, so the determinism criterion can compare bytes.
"""

import time

import numpy as np
import pandas as pd
import pytest
from pairrank.btmle import fit_mle, log_likelihood, score_vector
from pairrank.cli import main
from pairrank.comparisons import win_totals
from pairrank.datasets import make_dominant_player, make_fit_inputs, make_round_robin
from pairrank.fusedlasso import default_lambda_grid, solve_path
from pairrank.npmle import (
    GaussianObservations,
    GridSpec,
    MixingDistribution,
    fit_npmle,
    marginal_density,
    mixture_loglik,
    posterior_mean,
    posterior_mean_ranks,
)

from conftest import random_dataset


def batch_loglik(thetas, ds):
    total = np.zeros(len(thetas))
    for i, j, n, w in ds.pairs():
        d = thetas[:, i] - thetas[:, j]
        total += w * d - n * np.logaddexp(0.0, d)
    return total


def grid_search_mle(ds, rounds=6, span=6.0, points=11):
    """Brute-force maximizer: full grid over the free ratings, refined."""
    free = ds.n_players - 1
    center = np.zeros(free)
    width = span
    for _ in range(rounds):
        axes = [np.linspace(c - width, c + width, points) for c in center]
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)
        candidates = np.concatenate([np.zeros((len(flat), 1)), flat], axis=1)
        center = flat[np.argmax(batch_loglik(candidates, ds))]
        width /= 5.0
    return np.concatenate([[0.0], center])


def test_criterion_1_mle_matches_brute_force_grid_search():
    start = time.monotonic()
    rng = np.random.default_rng(1001)
    worst_gap, worst_grad = 0.0, 0.0
    for _ in range(25):
        ds = random_dataset(rng, int(rng.integers(3, 6)), mean_matches=5.0)
        fit = fit_mle(ds)
        assert np.max(np.abs(fit.theta)) < 5.5, "grid span must cover the optimum"
        oracle = grid_search_mle(ds)
        gap = float(np.max(np.abs(fit.theta - oracle)))
        grad = float(np.max(np.abs(score_vector(fit.theta, ds))))
        assert gap <= 1e-3
        assert grad <= 1e-8
        worst_gap, worst_grad = max(worst_gap, gap), max(worst_grad, grad)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    print(f"criterion 1: 25 datasets, max |theta - grid| {worst_gap:.2e} <= 1e-3, "
          f"max grad {worst_grad:.2e} <= 1e-8, {elapsed:.1f} s < 10 s")


def test_criterion_2_balanced_round_robin_orders_by_win_totals():
    start = time.monotonic()
    for seed in range(25):
        ds = make_round_robin(n_players=20, matches_per_pair=8, seed=seed)
        theta = fit_mle(ds).theta
        totals = win_totals(ds)
        for i in range(20):
            for j in range(20):
                if totals[i] > totals[j]:
                    assert theta[i] > theta[j], (
                        f"seed {seed}: win totals {totals[i]} > {totals[j]} "
                        f"but ratings {theta[i]:.4f} <= {theta[j]:.4f}"
                    )
    elapsed = time.monotonic() - start
    assert elapsed < 5.0
    print(f"criterion 2: 25 balanced round robins (p=20, 8 per pair), rating "
          f"order = win-total order, {elapsed:.1f} s < 5 s")


def test_criterion_3_penalty_path_endpoints_bic_and_certificates():
    start = time.monotonic()
    ds = make_dominant_player()
    mle = fit_mle(ds)
    grid = default_lambda_grid(ds)
    path = solve_path(ds, grid)

    at_zero = path.solutions[0]
    assert at_zero.lam == 0.0
    assert np.array_equal(np.argsort(at_zero.theta), np.argsort(mle.theta))
    assert path.solutions[-1].k == 1
    worst_cert = max(sol.certificate for sol in path)
    assert worst_cert <= 1e-6

    two_point = solve_path(ds, np.array([0.0, float(grid[25])]))
    n_total = int(ds.n_matches.sum())
    for sol in two_point:
        by_hand = -2.0 * log_likelihood(sol.theta, ds) + sol.k * np.log(n_total)
        assert sol.bic == pytest.approx(by_hand, abs=1e-9)

    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    print(f"criterion 3: lam=0 matches MLE ranking, lam_max pools to k=1, "
          f"BIC hand-check ok, max certificate {worst_cert:.2e} <= 1e-6, "
          f"{elapsed:.1f} s < 30 s")


def test_criterion_4_npmle_first_order_optimality_and_dominance():
    start = time.monotonic()
    worst_kkt_rel = -np.inf
    for seed in range(10):
        theta_hat, sigma_hat, _, atoms, probs = make_fit_inputs(
            n_players=200, seed=seed
        )
        obs = GaussianObservations(theta_hat, sigma_hat)
        grid = GridSpec().build(obs)
        g = fit_npmle(obs, grid=grid, tol=1e-7)

        # independent KKT recompute over the whole grid
        z = (obs.theta_hat[:, None] - grid[None, :]) / obs.sigma_hat[:, None]
        kernel = np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * obs.sigma_hat[:, None])
        f = np.array([
            marginal_density(g, t, s)
            for t, s in zip(obs.theta_hat, obs.sigma_hat)
        ])
        d_max = float((kernel / f[:, None]).sum(axis=0).max())
        assert d_max <= 200 * (1 + 1e-6)
        worst_kkt_rel = max(worst_kkt_rel, d_max / 200 - 1)

        fitted = mixture_loglik(g, obs)
        truth = MixingDistribution(np.asarray(atoms), np.asarray(probs))
        assert fitted >= mixture_loglik(truth, obs) - 1e-9
        cand_rng = np.random.default_rng(10_000 + seed)
        for _ in range(100):
            candidate = MixingDistribution(grid, cand_rng.dirichlet(np.ones(len(grid))))
            assert fitted >= mixture_loglik(candidate, obs) - 1e-9
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    print(f"criterion 4: 10 problems (p=200), KKT max gap {worst_kkt_rel:.2e} "
          f"<= 1e-6, loglik beats truth and 100 random mixtures each, "
          f"{elapsed:.1f} s < 60 s")


def enumeration_rank_oracle(g, theta, cov, floor=1e-10):
    # scalar log-space enumeration; the bivariate normal constant and the
    # det term are shared by every atom pair of a block, so they cancel in
    # the ratio and are dropped for stability near the floored anchor
    q = len(theta)
    P = np.zeros((q, q))
    for i in range(q):
        for j in range(q):
            if i == j:
                continue
            vi, vj, c = cov[i, i], cov[j, j], cov[i, j]
            det = vi * vj - c * c
            if min(vi, vj) <= floor or det <= floor * max(vi, vj, floor):
                vi, vj = vi + floor, vj + floor
                det = vi * vj - c * c
            terms, wins = [], []
            for k, tk in enumerate(g.atoms):
                for l, tl in enumerate(g.atoms):
                    e, f = theta[i] - tk, theta[j] - tl
                    quad = (vj / det) * e * e - 2.0 * (c / det) * e * f \
                        + (vi / det) * f * f
                    terms.append(
                        np.log(g.weights[k]) + np.log(g.weights[l]) - 0.5 * quad
                    )
                    wins.append(tk >= tl)
            terms, wins = np.array(terms), np.array(wins)
            # one shared shift: separate logsumexps would re-quantize the
            # ~1e9-magnitude logs before the subtraction
            scaled = np.exp(terms - terms.max())
            P[i, j] = scaled[wins].sum() / scaled.sum()
    return P.sum(axis=1)


FIXTURE_PRIORS = (
    (np.array([-1.0, 0.0, 1.0]), np.array([0.2, 0.5, 0.3])),
    (np.array([-0.5, 0.5]), np.array([0.6, 0.4])),
    (np.array([-2.0, -0.3, 0.4, 1.7]), np.array([0.1, 0.4, 0.4, 0.1])),
    (np.array([0.25]), np.array([1.0])),
    (np.array([-1.2, -0.4, 0.1, 0.9, 2.1]), np.array([0.15, 0.2, 0.3, 0.2, 0.15])),
)


def test_criterion_5_posterior_ranks_enumeration_and_monotone_bayes():
    start = time.monotonic()
    worst = 0.0
    for seed, (atoms, weights) in enumerate(FIXTURE_PRIORS):
        rng = np.random.default_rng(500 + seed)
        fit = fit_mle(random_dataset(rng, 3, mean_matches=8.0))
        g = MixingDistribution(atoms, weights)
        cov = np.zeros((3, 3))
        cov[1:, 1:] = fit.cov
        got = posterior_mean_ranks(g, fit)
        expected = enumeration_rank_oracle(g, fit.theta, cov)
        gap = float(np.max(np.abs(got - expected)))
        assert gap <= 1e-10
        worst = max(worst, gap)

    rng = np.random.default_rng(777)
    for _ in range(25):
        m = int(rng.integers(2, 7))
        atoms = np.sort(rng.uniform(-2.0, 2.0, size=m))
        # floor the weights and keep sigma away from 0 so no posterior mean
        # saturates onto an atom to the last bit, which would turn the strict
        # ordering into exact float ties
        weights = 0.7 * rng.dirichlet(np.ones(m)) + 0.3 / m
        g = MixingDistribution(atoms, weights)
        theta_hat = rng.uniform(-2.5, 2.5, size=12)
        sigma = float(rng.uniform(0.6, 1.0))
        post = posterior_mean(g, theta_hat, np.full(12, sigma))
        assert np.array_equal(np.argsort(post), np.argsort(theta_hat))
    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    print(f"criterion 5: 5 enumeration fixtures max gap {worst:.2e} <= 1e-10, "
          f"monotone Bayes rule on 25 equal-noise instances, {elapsed:.1f} s < 10 s")


@pytest.fixture(scope="module")
def preset_runner(tmp_path_factory):
    cache = {}

    def run(preset):
        if preset not in cache:
            dirs = []
            elapsed = []
            for attempt in ("first", "second"):
                out = tmp_path_factory.mktemp(f"{preset}-{attempt}")
                t0 = time.monotonic()
                code = main(["simulate", "--preset", preset,
                             "--out-dir", str(out), "--threads", "1"])
                elapsed.append(time.monotonic() - t0)
                assert code == 0, f"simulate --preset {preset} exited {code}"
                dirs.append(out)
            cache[preset] = (dirs, max(elapsed))
        return cache[preset]

    return run


def mean_taus(out_dir, replications):
    summary = pd.read_csv(out_dir / "summary.csv")
    assert (summary["n_ok"] == replications).all(), "replications were lost"
    return dict(zip(summary["method"], summary["mean_tau"]))


def test_criterion_6_locality_design_pattern_borda_fails_eb_holds(preset_runner):
    dirs, elapsed = preset_runner("acceptance-dirac-ls")
    tau = mean_taus(dirs[0], replications=20)
    assert tau["B"] <= tau["MLE"] - 0.1, (
        f"B {tau['B']:.4f} vs MLE {tau['MLE']:.4f}"
    )
    assert tau["KWPM"] >= tau["MLE"] - 0.02, (
        f"KWPM {tau['KWPM']:.4f} vs MLE {tau['MLE']:.4f}"
    )
    assert elapsed < 600.0
    print(f"criterion 6: dirac x LS (p=100, n=10000, 20 reps): "
          f"B {tau['B']:.3f} <= MLE {tau['MLE']:.3f} - 0.1, "
          f"KWPM {tau['KWPM']:.3f} >= MLE - 0.02, {elapsed:.0f} s < 600 s")


def test_criterion_7_random_design_methods_within_handbreadth(preset_runner):
    dirs, elapsed = preset_runner("acceptance-lognormal-rs")
    tau = mean_taus(dirs[0], replications=20)
    values = [tau[m] for m in ("MLE", "KWPM", "B", "WB")]
    gap = max(values) - min(values)
    assert gap <= 0.05, f"method means {tau}"
    assert elapsed < 600.0
    print(f"criterion 7: lognormal x RS (n=50000, 20 reps): max method gap "
          f"{gap:.4f} <= 0.05, {elapsed:.0f} s < 600 s")


def test_criterion_8_large_sample_mle_accuracy(preset_runner):
    dirs, _ = preset_runner("acceptance-largen-rs")
    tau = mean_taus(dirs[0], replications=10)
    assert tau["MLE"] >= 0.95, f"mean tau {tau['MLE']:.4f}"
    print(f"criterion 8: lognormal x RS (n=100000, 10 reps): "
          f"mean tau(MLE) {tau['MLE']:.4f} >= 0.95")


def test_criterion_9_simulations_reproduce_byte_identically(preset_runner):
    presets = ("acceptance-dirac-ls", "acceptance-lognormal-rs",
               "acceptance-largen-rs")
    for preset in presets:
        (first, second), _ = preset_runner(preset)
        for name in ("results.csv", "summary.csv"):
            a = (first / name).read_bytes()
            b = (second / name).read_bytes()
            assert a == b, f"{preset}/{name} differs between identical runs"
    print("criterion 9: results.csv and summary.csv byte-identical across "
          "repeat runs of all three presets")
