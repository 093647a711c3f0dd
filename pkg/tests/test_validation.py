import math

import numpy as np
import pytest

from drccmdp.errors import DomainError
from drccmdp.mdp import build_occupation_polytope
from drccmdp.moments import MomentAmbiguity, solve_gaussian, solve_moments
from drccmdp.phidiv import PhiAmbiguity, solve_phi
from drccmdp.solution import DrccmdpSolution
from drccmdp.validation import binomial_halfwidth, cantelli_worst_case, certify, monte_carlo_chance
from drccmdp.wasserstein import WassersteinAmbiguity, solve_wasserstein

from conftest import random_mdp


def _instance(seed=17, n=3):
    mdp = random_mdp(n, 2, seed=seed)
    rng = np.random.default_rng(seed)
    A = rng.random((2 * n, 2 * n))
    return build_occupation_polytope(mdp), rng.uniform(5, 15, 2 * n), A @ A.T / (2 * n) + np.eye(2 * n)


def test_monte_carlo_basics():
    assert monte_carlo_chance([1.0], -1e9, [0.0], [[1.0]], 10_000, 0) == 1.0
    N = 100_000
    p = monte_carlo_chance([1.0], 0.0, [0.0], [[1.0]], N, 1)
    assert abs(p - 0.5) <= binomial_halfwidth(0.5, N)
    assert monte_carlo_chance([1.0], 0.0, [0.0], [[1.0]], N, 1) == p


def test_monte_carlo_at_gaussian_optimum():
    poly, mu, S = _instance()
    sol = solve_gaussian(poly, mu, S, 0.1)
    N = 200_000
    p = monte_carlo_chance(sol.rho, sol.y, mu, S, N, 5)
    assert abs(p - 0.9) <= binomial_halfwidth(0.9, N)


def test_monte_carlo_interval_shrinks_with_n():
    # Across seeds the spread of the estimate follows the binomial width.
    for N in (4000, 16000):
        est = [monte_carlo_chance([1.0], 0.0, [0.0], [[1.0]], N, s) for s in range(40)]
        sd = np.std(est)
        assert 0.5 * math.sqrt(0.25 / N) < sd < 1.6 * math.sqrt(0.25 / N)


def test_cantelli_examples():
    rho, mu, S = np.array([1.0]), np.array([5.0]), np.array([[4.0]])
    assert cantelli_worst_case(rho, 5.0 - 3 * 2.0, mu, S) == pytest.approx(0.1, abs=1e-15)
    assert cantelli_worst_case(rho, -1e12, mu, S) == pytest.approx(0.0, abs=1e-15)
    assert cantelli_worst_case(rho, 6.0, mu, S) == 1.0
    with pytest.raises(DomainError):
        cantelli_worst_case(rho, 6.0, mu, S, strict=True)


def test_cantelli_matches_two_point_distributions():
    # A two-point law with mean m and variance v has atoms m - a and m + v / a
    # with mass v / (a^2 + v) on the lower one.  Grid the lower atom over
    # [y - 10, y]; laws whose lower atom lies above y put no mass below y.
    m, v = 1.0, 2.0
    for y in (0.5, 0.0, -1.0, -3.5):
        lower = np.linspace(y - 10, y, 1000)
        a = m - lower
        best = np.max(v / (a * a + v))
        assert cantelli_worst_case([1.0], y, [m], [[v]]) == pytest.approx(best, abs=1e-4)


def test_cantelli_scale_invariance(rng):
    rho, mu = rng.random(4), rng.uniform(2, 5, 4)
    A = rng.random((4, 4))
    S = A @ A.T
    y = float(mu @ rho) - 1.0
    base = cantelli_worst_case(rho, y, mu, S)
    for c in (0.1, 3.0, 1e3):
        assert cantelli_worst_case(c * rho, c * y, mu, S) == pytest.approx(base, abs=1e-10)


def test_certify_d1_and_corruption():
    poly, mu, S = _instance()
    spec = MomentAmbiguity("D1", mu, S, 0.1)
    sol = solve_moments(poly, spec)
    rep = certify(sol, spec, samples=20_000, seed=2)
    assert rep.method == "cantelli" and rep.passed
    assert rep.worst_case == pytest.approx(0.1, abs=1e-6)
    bad = DrccmdpSolution(sol.model, sol.status, sol.y + 1, sol.rho, sol.policy)
    rep = certify(bad, spec, samples=0)
    assert rep.passed is False and rep.slack > 0


def test_certify_wasserstein_and_phi():
    poly, mu, S = _instance()
    rng = np.random.default_rng(0)
    xi = rng.multivariate_normal(mu, S, size=8)
    spec = WassersteinAmbiguity(0.05, 0.1, xi)
    sol = solve_wasserstein(poly, spec)
    rep = certify(sol, spec)
    assert rep.method == "wasserstein-breakpoint" and rep.passed and rep.worst_case <= 0.1 + 1e-6
    phi = PhiAmbiguity("kl", 0.01, 0.1, mu, S)
    rep = certify(solve_phi(poly, phi), phi, samples=50_000, seed=3)
    assert rep.method == "monte-carlo-nominal" and rep.passed and rep.worst_case is None
    assert 0.0 <= rep.empirical <= 1.0


def test_certify_flags_unsupported():
    poly, mu, S = _instance()
    spec = MomentAmbiguity("D3", mu, S, 0.1, delta1=0.5, delta2=1.0)
    rep = certify(solve_moments(poly, spec), spec, samples=1000)
    assert rep.passed is None and rep.method == "unsupported"
