import math
import warnings

import numpy as np
import pytest
from scipy.linalg import sqrtm

from drccmdp.conic import ProgramBuilder, solve_continuous, svec
from drccmdp.errors import DomainError, InvalidModel
from drccmdp.mdp import build_occupation_polytope, solve_nominal_lp
from drccmdp.moments import (
    MomentAmbiguity, _MatrixExpr, approximate_cop_constraint, build_copositive_program, build_kappa_socp,
    kappa_for, solve_full_support, solve_moments, solve_moments_nonnegative,
)
from drccmdp.validation import cantelli_worst_case

from conftest import random_mdp, single_pair_poly


def amb(kind, mu, sigma, eps=0.1, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return MomentAmbiguity(kind, np.atleast_1d(mu), np.atleast_2d(sigma), eps, **kw)


def test_kappa_collapses():
    S = np.eye(2)
    assert kappa_for(amb("D1", [0, 0], S)) == pytest.approx(3.0, abs=1e-15)
    for eps in (0.01, 0.1, 0.3):
        d1 = kappa_for(amb("D1", [0, 0], S, eps))
        assert kappa_for(amb("D2", [0, 0], S, eps, delta0=1.0)) == d1
        assert kappa_for(amb("D3", [0, 0], S, eps, delta1=0.0, delta2=1.0)) == d1
        assert d1 <= kappa_for(amb("D2", [0, 0], S, eps, delta0=1.5)) <= kappa_for(
            amb("D3", [0, 0], S, eps, delta1=0.2, delta2=1.5))


def test_parameter_domain():
    with pytest.raises(DomainError):
        MomentAmbiguity("D1", [0.0], [[1.0]], 1.0)
    with pytest.raises(InvalidModel):
        MomentAmbiguity("D1", [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], 0.1)
    with pytest.warns(UserWarning):
        MomentAmbiguity("D2", [0.0], [[1.0]], 0.1, delta0=0.9)


def test_scalar_socp():
    sol = solve_full_support(single_pair_poly(), amb("D1", [10.0], [[4.0]]))
    assert sol.status == "optimal"
    assert sol.y == pytest.approx(4.0, abs=1e-7)


def test_vanishing_covariance_gives_nominal_lp():
    mdp = random_mdp(4, 2, seed=21)
    mu = np.random.default_rng(21).uniform(0, 5, 8)
    val, _ = solve_nominal_lp(mdp, mu)
    sol = solve_full_support(build_occupation_polytope(mdp), amb("D1", mu, 1e-12 * np.eye(8)))
    assert sol.y == pytest.approx(val, abs=1e-4)


def test_square_root_invariance():
    mdp = random_mdp(3, 2, seed=4)
    poly = build_occupation_polytope(mdp)
    rng = np.random.default_rng(4)
    A = rng.random((6, 6))
    S = A @ A.T + np.eye(6)
    mu = rng.uniform(1, 5, 6)
    r1 = solve_continuous(build_kappa_socp(poly, mu, S, 3.0))
    r2 = solve_continuous(build_kappa_socp(poly, mu, S, 3.0, chol=np.real(sqrtm(S))))
    assert r1.objective == pytest.approx(r2.objective, abs=1e-7)


def test_cantelli_tight_and_kind_ordering():
    mdp = random_mdp(4, 2, seed=9)
    poly = build_occupation_polytope(mdp)
    rng = np.random.default_rng(9)
    A = rng.random((8, 8))
    S = A @ A.T / 8 + np.eye(8)
    mu = rng.uniform(5, 20, 8)
    d1 = solve_moments(poly, amb("D1", mu, S))
    d2 = solve_moments(poly, amb("D2", mu, S, delta0=1.3))
    d3 = solve_moments(poly, amb("D3", mu, S, delta1=0.5, delta2=1.3))
    assert d1.y >= d2.y - 1e-7 >= d3.y - 2e-7
    assert cantelli_worst_case(d1.rho, d1.y, mu, S) == pytest.approx(0.1, abs=1e-6)
    assert cantelli_worst_case(d2.rho, d2.y, mu, 1.3 * S) == pytest.approx(0.1, abs=1e-6)


# Copositive inner approximation ------------------------------------------------

def _cop_feasible(M):
    """Feasibility of the PSD + nonnegative split of a constant matrix."""
    M = np.asarray(M, dtype=float)
    k = M.shape[0] - 1
    b = ProgramBuilder()
    Q = b.var("Q", k * (k + 1) // 2)
    u = b.var("u", k)
    w = b.var("w")
    b.add("zero", [(1.0, Q)], -svec(M[:k, :k]))
    b.add("zero", [(1.0, u)], -M[:k, k])
    b.add("zero", [(1.0, w)], -M[k, k])
    e = _MatrixExpr(k, Q, 1.0)
    e.off(np.eye(k), u)
    e.corner_term(1.0, w)
    approximate_cop_constraint(b, e, "M")
    return solve_continuous(b.build("min")).status


def test_cop_approximation_examples(rng):
    assert _cop_feasible(np.eye(2)) == "optimal"
    assert _cop_feasible(np.eye(4)) == "optimal"
    M = np.array([[0.0, -1.0], [-1.0, 0.0]])
    assert np.ones(2) @ M @ np.ones(2) == -2.0
    assert _cop_feasible(M) == "infeasible"
    for _ in range(5):
        N = rng.random((3, 3))
        assert _cop_feasible(N + N.T) == "optimal"


def test_zero_multiplier_leaves_y_free():
    prog = build_copositive_program(single_pair_poly(), amb("D1", [2.0], [[1.0]], support="nonneg"), 0.0)
    assert solve_continuous(prog).status == "unbounded"


def test_scalar_nonneg_exact_value():
    # For a nonnegative scalar with mean 2 and variance 1 the two-point worst
    # case sits on y >= 0, so the value is the one-sided Chebyshev level
    # 2 - sqrt((1 - eps) / eps) = 2 - sqrt(3) at eps = 1/4.
    sol = solve_moments_nonnegative(single_pair_poly(), amb("D1", [2.0], [[1.0]], 0.25, support="nonneg"))
    assert sol.status == "optimal"
    assert sol.y == pytest.approx(2 - math.sqrt(3), abs=1e-5)


def _scalar_d1_grid(mu, var, eps, lams, n=2001):
    """Brute force over (Q, q) in [-10, 10]^2 for the scalar D1 program.

    t only enters through (i), which bounds it below, and through the corner
    entries, which decrease in t; so the smallest admissible t is optimal.  A
    2 x 2 matrix [[a, b], [b, c]] is copositive iff a, c >= 0 and
    b >= -sqrt(a c); for each grid point the largest admissible y then
    follows in closed form.
    """
    g = np.linspace(-10, 10, n)
    Q, q = np.meshgrid(g, g, indexing="ij")
    t = -eps - Q * var - q * mu
    # (ii): [[-Q, -q/2 + Q mu], [., -t - mu^2 Q]] copositive
    a, off, c = -Q, -q / 2 + Q * mu, -t - mu * mu * Q
    ok = (a >= 0) & (c >= 0) & (off >= -np.sqrt(np.clip(a * c, 0, None)))
    best = -np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        for lam in lams:
            # (iii): same matrix with lam/2 added off the diagonal and
            # -(1 + lam y) in the corner.
            off3 = off + lam / 2
            need = np.where(off3 >= 0, 0.0, np.where(a > 0, off3 ** 2 / a, np.inf))
            y = np.where(ok, (c - 1 - need) / lam, -np.inf)
            best = max(best, float(np.max(y)))
    return best


def test_scalar_copositive_matches_grid_oracle():
    sol = solve_moments_nonnegative(single_pair_poly(), amb("D1", [2.0], [[1.0]], 0.25, support="nonneg"))
    brute = _scalar_d1_grid(2.0, 1.0, 0.25, np.logspace(-2, 1, 61))
    assert sol.y == pytest.approx(brute, abs=1e-2)


def test_nonneg_close_to_full_for_tiny_covariance():
    mdp = random_mdp(2, 2, seed=8)
    poly = build_occupation_polytope(mdp)
    mu = np.array([10.0, 12.0, 11.0, 9.0])
    S = 1e-4 * np.eye(4)
    val, _ = solve_nominal_lp(mdp, mu)
    full = solve_moments(poly, amb("D1", mu, S))
    nn = solve_moments(poly, amb("D1", mu, S, support="nonneg"))
    assert nn.status == "optimal"
    assert nn.y <= val + 1e-7
    assert nn.y == pytest.approx(full.y, abs=1e-2)
    assert poly.residual(nn.rho) < 1e-7


def test_nonneg_d2_d3_run_and_stay_below_nominal():
    mdp = random_mdp(2, 2, seed=8)
    poly = build_occupation_polytope(mdp)
    mu = np.array([10.0, 12.0, 11.0, 9.0])
    S = np.diag([1.0, 2.0, 1.5, 0.5])
    val, _ = solve_nominal_lp(mdp, mu)
    d2 = solve_moments(poly, amb("D2", mu, S, delta0=1.2, support="nonneg"))
    d3a = solve_moments(poly, amb("D3", mu, S, delta1=0.0, delta2=1.2, support="nonneg"))
    d3b = solve_moments(poly, amb("D3", mu, S, delta1=0.5, delta2=1.2, support="nonneg"))
    for s in (d2, d3a, d3b):
        assert s.status == "optimal" and s.y <= val + 1e-7
    # Enlarging the mean ellipsoid can only lower the guaranteed level.
    assert d3b.y <= d3a.y + 1e-6


def test_multiplier_bracket_extension_warns():
    # A nearly deterministic reward pushes the best multiplier past the grid.
    a = amb("D1", [2.0], [[1e-6]], 0.25, support="nonneg")
    with pytest.warns(UserWarning, match="boundary"):
        sol = solve_moments_nonnegative(single_pair_poly(), a)
    exact = 2 - math.sqrt(3) * 1e-3
    assert exact - 1e-4 <= sol.y <= exact + 1e-7


def test_nonneg_search_is_scale_invariant():
    base = solve_moments_nonnegative(single_pair_poly(), amb("D1", [2.0], [[1.0]], 0.25, support="nonneg"))
    big = solve_moments_nonnegative(single_pair_poly(), amb("D1", [2e4], [[1e8]], 0.25, support="nonneg"))
    assert big.y == pytest.approx(1e4 * base.y, rel=1e-8)
    assert big.diagnostics["lambda"] == pytest.approx(1e-4 * base.diagnostics["lambda"], rel=1e-8)
