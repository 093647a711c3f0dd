"""Moment-based ambiguity sets.

Three sets are supported, all parametrized by a mean vector and covariance:

* ``D1`` known mean and covariance,
* ``D2`` known mean, covariance bounded above by ``delta0 * Sigma``,
* ``D3`` mean in an ellipsoid of size ``delta1``, second moment bounded by
  ``delta2 * Sigma``.

With unrestricted support each robust chance constraint becomes a single
second-order cone constraint ``mu' rho - kappa ||L' rho|| >= y``.  With
nonnegative support the exact reformulation is copositive; it is solved here
through the PSD-plus-nonnegative inner approximation for a fixed multiplier
``lam`` and a one-dimensional search over ``lam``.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .conic import ConeProgram, ProgramBuilder, lower_tri_pairs, solve_continuous, svec, tri_len
from .errors import DomainError, InvalidModel, SolverFailure
from .phidiv import normal_quantile
from .solution import DrccmdpSolution

log = logging.getLogger(__name__)

KINDS = ("D1", "D2", "D3")


def cholesky(sigma) -> np.ndarray:
    """Lower Cholesky factor; raises InvalidModel if sigma is not positive definite."""
    S = np.asarray(sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-10):
        raise InvalidModel("covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise InvalidModel("covariance is not positive definite (Cholesky failed)") from exc


@dataclass(frozen=True)
class MomentAmbiguity:
    kind: str
    mu: np.ndarray
    sigma: np.ndarray
    epsilon: float
    delta0: float = 1.0
    delta1: float = 0.0
    delta2: float = 1.0
    support: str = "full"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidModel(f"unknown moment set {self.kind!r}")
        if self.support not in ("full", "nonneg"):
            raise InvalidModel("support must be 'full' or 'nonneg'")
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError("epsilon must lie in (0, 1)")
        mu = np.asarray(self.mu, dtype=float)
        S = np.asarray(self.sigma, dtype=float)
        if S.shape != (mu.size, mu.size):
            raise InvalidModel("mean and covariance dimensions disagree")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", S)
        object.__setattr__(self, "_chol", cholesky(S))
        if self.kind == "D2":
            if self.delta0 <= 0:
                raise DomainError("delta0 must be positive")
            if self.delta0 < 1:
                warnings.warn(f"delta0 = {self.delta0} < 1 shrinks the covariance bound below Sigma", stacklevel=3)
        if self.kind == "D3":
            if self.delta1 < 0:
                raise DomainError("delta1 must be nonnegative")
            if self.delta2 <= 0:
                raise DomainError("delta2 must be positive")
            if self.delta2 < 1:
                warnings.warn(f"delta2 = {self.delta2} < 1 shrinks the second-moment bound below Sigma", stacklevel=3)

    @property
    def chol(self) -> np.ndarray:
        return self._chol


def kappa_for(a: MomentAmbiguity) -> float:
    eps = a.epsilon
    if not 0.0 < eps < 1.0:
        raise DomainError("epsilon must lie in (0, 1)")
    if a.kind == "D1":
        return math.sqrt((1.0 - eps) / eps)
    if a.kind == "D2":
        return math.sqrt((1.0 - eps) * a.delta0 / eps)
    return math.sqrt((1.0 - eps) * a.delta2 / eps) + math.sqrt(a.delta1)


def gaussian_kappa(eps: float) -> float:
    """Quantile multiplier when the reward is exactly normal."""
    return normal_quantile(1.0 - eps)


# ---------------------------------------------------------------------------
# Full support


def _polytope_rows(b: ProgramBuilder, poly, rho):
    b.add("zero", [(poly.eq_matrix, rho)], -poly.eq_rhs, name="occupation")
    b.add("nonneg", [(1.0, rho)], np.zeros(rho.size), name="rho>=0")


def build_kappa_socp(poly, mu, sigma, kappa: float, chol=None) -> ConeProgram:
    """max y  s.t.  mu' rho - kappa ||L' rho|| >= y,  rho in the occupation polytope."""
    mu = np.asarray(mu, dtype=float)
    m = poly.n_pairs
    if mu.shape != (m,):
        raise InvalidModel(f"mean vector must have length {m}")
    L = cholesky(sigma) if chol is None else chol
    if kappa < 0:
        raise DomainError("a negative quantile multiplier makes the constraint nonconvex (epsilon > 1/2)")
    b = ProgramBuilder()
    y = b.var("y")
    rho = b.var("rho", m)
    b.objective(1.0, y)
    _polytope_rows(b, poly, rho)
    if kappa == 0:
        b.add("nonneg", [(mu, rho), (-1.0, y)], 0.0, name="chance")
    else:
        coef = sp.vstack([sp.csr_matrix(mu / kappa), sp.csr_matrix(L.T)])
        b.add("soc", [(coef, rho), (np.r_[-1.0 / kappa, np.zeros(m)][:, None], y)], np.zeros(m + 1), name="chance")
    return b.build("max")


def solve_kappa_socp(poly, mu, sigma, kappa, model: str, chol=None) -> DrccmdpSolution:
    prog = build_kappa_socp(poly, mu, sigma, kappa, chol)
    res = solve_continuous(prog)
    if res.status == "numerical-failure":
        raise SolverFailure(f"{model}: conic backend failed ({res.info.get('backend_status')})")
    rho = None if res.x is None else res.x[prog.block("rho")]
    return DrccmdpSolution.from_rho(model, res.status, res.objective, rho, poly, res.wall_time,
                                    kappa=kappa, iterations=res.iterations)


def build_full_support_socp(poly, a: MomentAmbiguity) -> ConeProgram:
    if a.support != "full":
        raise InvalidModel("full-support reformulation called with nonnegative support")
    return build_kappa_socp(poly, a.mu, a.sigma, kappa_for(a), a.chol)


def solve_full_support(poly, a: MomentAmbiguity, model: str | None = None) -> DrccmdpSolution:
    return solve_kappa_socp(poly, a.mu, a.sigma, kappa_for(a), model or a.kind.lower(), a.chol)


def solve_gaussian(poly, mu, sigma, eps: float, model: str = "gaussian") -> DrccmdpSolution:
    """Chance-constrained MDP with an exactly known normal reward."""
    return solve_kappa_socp(poly, mu, sigma, gaussian_kappa(eps), model)


# ---------------------------------------------------------------------------
# Nonnegative support: copositive programs with fixed multiplier


class _SymMap:
    """Linear maps from the stacked entries of a symmetric K x K variable Q."""

    def __init__(self, k: int):
        self.k = k
        self.pairs = lower_tri_pairs(k)
        self.n = len(self.pairs)

    def times_vector(self, v) -> np.ndarray:
        """Matrix G with G @ svec(Q) = Q v."""
        G = np.zeros((self.k, self.n))
        for p, (i, j) in enumerate(self.pairs):
            if i == j:
                G[i, p] = v[i]
            else:
                G[i, p] = v[j] / math.sqrt(2.0)
                G[j, p] = v[i] / math.sqrt(2.0)
        return G


def _embed(k: int):
    """Row positions, inside the stacked (k+1) x (k+1) matrix, of the top-left
    block entries, the last-column entries and the corner."""
    pos = {p: r for r, p in enumerate(lower_tri_pairs(k + 1))}
    top = np.array([pos[p] for p in lower_tri_pairs(k)])
    col = np.array([pos[(k, j)] for j in range(k)])
    return top, col, pos[(k, k)]


class _MatrixExpr:
    """Affine expression for svec of a (k+1) x (k+1) block matrix
    ``[[s * Q, u], [u', w]]`` with u and w affine in the variables."""

    def __init__(self, k: int, qidx, q_sign: float):
        self.k = k
        self.rows = tri_len(k + 1)
        self.top, self.col, self.corner = _embed(k)
        self.terms = []
        self.const = np.zeros(self.rows)
        nq = tri_len(k)
        T = sp.csr_matrix((np.full(nq, q_sign), (self.top, np.arange(nq))), shape=(self.rows, nq))
        self.terms.append((T, qidx))

    def off(self, coef, idx):
        """Add ``coef @ x[idx]`` (a k-vector) to the last column u."""
        C = sp.coo_matrix(np.atleast_2d(coef) if np.ndim(coef) == 2 else np.asarray(coef, dtype=float)[:, None])
        R = sp.csr_matrix((C.data * math.sqrt(2.0), (self.col[C.row], C.col)), shape=(self.rows, C.shape[1]))
        self.terms.append((R, idx))

    def corner_term(self, coef, idx):
        coef = np.atleast_1d(np.asarray(coef, dtype=float))
        R = sp.csr_matrix((coef, (np.full(coef.size, self.corner), np.arange(coef.size))), shape=(self.rows, coef.size))
        self.terms.append((R, idx))

    def corner_const(self, v: float):
        self.const[self.corner] += v


def approximate_cop_constraint(b: ProgramBuilder, expr: _MatrixExpr, name: str):
    """Impose svec(M) = P + N with P PSD and N entrywise nonnegative.

    N is a new variable block; P is not materialized, the PSD cone acts on
    ``svec(M) - N`` directly.
    """
    n = b.var(f"{name}.N", expr.rows)
    b.add("nonneg", [(1.0, n)], np.zeros(expr.rows), name=f"{name}.N>=0")
    b.add("psd", expr.terms + [(-1.0, n)], expr.const, dim=expr.k + 1, name=f"{name}.P")
    return n


def build_copositive_program(poly, a: MomentAmbiguity, lam: float) -> ConeProgram:
    """Fixed-multiplier copositive program with COP replaced by PSD + nonnegative."""
    if a.support != "nonneg":
        raise InvalidModel("copositive reformulation called with full support")
    if lam < 0:
        raise DomainError("multiplier must be nonnegative")
    k = poly.n_pairs
    mu, S, eps = a.mu, a.sigma, a.epsilon
    if mu.shape != (k,):
        raise InvalidModel(f"mean vector must have length {k}")
    sm = _SymMap(k)
    Gmu = sm.times_vector(mu)
    v_mumu = svec(np.outer(mu, mu))
    v_sigma = svec(S)

    b = ProgramBuilder()
    y = b.var("y")
    rho = b.var("rho", k)
    Q = b.var("Q", sm.n)
    q = b.var("q", k)
    t = b.var("t")
    b.objective(1.0, y)
    _polytope_rows(b, poly, rho)
    z = np.zeros(k)

    if a.kind == "D1":
        # (i) -t - Q o Sigma - q' mu <= eps
        b.add("nonneg", [(1.0, t), (v_sigma, Q), (mu, q)], eps, name="mean")
        m2 = _MatrixExpr(k, Q, -1.0)
        m2.off(-0.5 * np.eye(k), q)
        m2.off(Gmu, Q)
        m2.corner_term(-1.0, t)
        m2.corner_term(-v_mumu, Q)
        approximate_cop_constraint(b, m2, "cop-ii")
        m3 = _MatrixExpr(k, Q, -1.0)
        m3.off(-0.5 * np.eye(k), q)
        m3.off(Gmu, Q)
        m3.off(0.5 * lam * np.eye(k), rho)
        m3.corner_term(-1.0, t)
        m3.corner_term(-v_mumu, Q)
        m3.corner_term(-lam, y)
        m3.corner_const(-1.0)
        approximate_cop_constraint(b, m3, "cop-iii")
    elif a.kind == "D2":
        # (i) -t - mu'q - mu'Q mu + delta0 Sigma o Q <= eps
        b.add("nonneg", [(1.0, t), (mu, q), (v_mumu - a.delta0 * v_sigma, Q)], eps, name="mean")
        m2 = _MatrixExpr(k, Q, 1.0)
        m2.off(-0.5 * np.eye(k), q)
        m2.off(-Gmu, Q)
        m2.corner_term(-1.0, t)
        approximate_cop_constraint(b, m2, "cop-ii")
        m3 = _MatrixExpr(k, Q, 1.0)
        m3.off(-0.5 * np.eye(k), q)
        m3.off(-Gmu, Q)
        m3.off(0.5 * lam * np.eye(k), rho)
        m3.corner_term(-1.0, t)
        m3.corner_term(-lam, y)
        m3.corner_const(-1.0)
        approximate_cop_constraint(b, m3, "cop-iii")
        b.add("psd", [(1.0, Q)], np.zeros(sm.n), dim=k, name="Q psd")
    else:
        r = b.var("r")
        # (i) r + t <= eps
        b.add("nonneg", [(-1.0, r), (-1.0, t)], eps, name="mean")
        m2 = _MatrixExpr(k, Q, 1.0)
        m2.off(0.5 * np.eye(k), q)
        m2.corner_term(1.0, r)
        approximate_cop_constraint(b, m2, "cop-ii")
        # (iii) t >= (delta2 Sigma + mu mu') o Q + mu'q + sqrt(delta1) ||L'(q + 2 Q mu)||
        lin = [(1.0, t), (-(a.delta2 * v_sigma + v_mumu), Q), (-mu, q)]
        if a.delta1 > 0:
            Lt = a.chol.T
            s1 = math.sqrt(a.delta1)
            soc_terms = [
                (np.r_[1.0, np.zeros(k)][:, None], t),
                (np.vstack([-(a.delta2 * v_sigma + v_mumu)[None, :], s1 * 2.0 * Lt @ Gmu]), Q),
                (np.vstack([-mu[None, :], s1 * Lt]), q),
            ]
            b.add("soc", soc_terms, np.zeros(k + 1), name="mean-ellipsoid")
        else:
            b.add("nonneg", lin, 0.0, name="mean-ellipsoid")
        m4 = _MatrixExpr(k, Q, 1.0)
        m4.off(0.5 * np.eye(k), q)
        m4.off(0.5 * lam * np.eye(k), rho)
        m4.corner_term(1.0, r)
        m4.corner_term(-lam, y)
        m4.corner_const(-1.0)
        approximate_cop_constraint(b, m4, "cop-iv")
        b.add("psd", [(1.0, Q)], np.zeros(sm.n), dim=k, name="Q psd")
    return b.build("max")


def _data_scale(a: MomentAmbiguity) -> float:
    s = max(float(np.max(np.abs(a.mu))), math.sqrt(float(np.max(np.diag(a.sigma)))))
    return s if s > 0 else 1.0


def _lambda_grid() -> np.ndarray:
    return np.r_[0.0, np.logspace(-3, 3, 24)]


def solve_moments_nonnegative(poly, a: MomentAmbiguity, model: str | None = None,
                              golden_tol: float = 1e-3, max_golden: int = 40) -> DrccmdpSolution:
    """Search the multiplier over a log grid, then refine by golden section in log10(lam)."""
    t0 = time.perf_counter()
    name = model or f"{a.kind.lower()}-nonneg"
    cache = {}
    # Work in units where mean and standard deviation are O(1); otherwise the
    # Q block lives at a scale far below the solver tolerances.  In these
    # units y and 1/lam are divided by ``scale``.
    scale = _data_scale(a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        unit = replace(a, mu=a.mu / scale, sigma=a.sigma / scale ** 2)

    def value(lam):
        if lam not in cache:
            prog = build_copositive_program(poly, unit, lam)
            res = solve_continuous(prog)
            # An "unbounded" flag is only a primal ray (y is free when lam = 0);
            # it certifies nothing about feasibility, so it scores like infeasible.
            y = scale * res.objective if res.status == "optimal" else -np.inf
            cache[lam] = (y, res, prog)
        return cache[lam][0]

    grid = list(_lambda_grid())
    vals = [value(l) for l in grid]
    best = int(np.argmax(vals))
    if best in (1, len(grid) - 1) and np.isfinite(vals[best]):
        # The maximum sits on the edge of the log grid: extend it once.
        step = np.diff(np.log10(grid[1:3]))[0]
        base = np.log10(grid[best])
        direction = 1.0 if best == len(grid) - 1 else -1.0
        ext = [10 ** (base + direction * step * i) for i in range(1, 5)]
        warnings.warn(f"{name}: best multiplier {grid[best]:.3g} on the grid boundary; bracket expanded", stacklevel=2)
        grid = sorted(grid + ext)
        vals = [value(l) for l in grid]
        best = int(np.argmax(vals))
    if not np.isfinite(vals[best]):
        return DrccmdpSolution(name, "infeasible", float("nan"), None, None, time.perf_counter() - t0,
                               {"lambda_grid": grid})

    # Golden section on log10(lam) between the grid neighbours of the best point.
    lo_i, hi_i = max(best - 1, 1), min(best + 1, len(grid) - 1)
    lo, hi = np.log10(grid[lo_i]), np.log10(grid[hi_i])
    g = (math.sqrt(5.0) - 1.0) / 2.0
    f = lambda u: value(float(10 ** u))
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    it = 0
    while hi - lo > golden_tol and it < max_golden:
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
        it += 1
    lam_best = max(cache, key=lambda l: cache[l][0])
    y, res, prog = cache[lam_best]
    rho = res.x[prog.block("rho")]
    return DrccmdpSolution.from_rho(name, "optimal", y, rho, poly, time.perf_counter() - t0,
                                    **{"lambda": lam_best / scale, "n_solves": len(cache), "scale": scale})


def solve_moments(poly, a: MomentAmbiguity, model: str | None = None) -> DrccmdpSolution:
    if a.support == "full":
        return solve_full_support(poly, a, model)
    return solve_moments_nonnegative(poly, a, model)
