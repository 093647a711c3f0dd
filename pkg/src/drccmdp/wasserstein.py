"""Order-1 Wasserstein balls around an empirical reward distribution.

Full support leads to a mixed-integer SOCP with big-M indicator rows.
Nonnegative support leads to a biconvex program, handled by alternating
convex search started from the full-support solution.  Both are checked
against an exact worst-case probability oracle that needs only distances
from each scenario to the half-space ``{z : rho' z <= y}``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .conic import ConeProgram, ProgramBuilder, fix_binaries, solve_continuous, solve_misocp
from .config import TOL
from .errors import DomainError, InvalidModel, SolverFailure
from .solution import DrccmdpSolution

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScenarioSet:
    xi: np.ndarray
    seed: int | None = None
    generator: str = ""
    clipped: int = 0

    def __post_init__(self):
        xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        if not np.all(np.isfinite(xi)):
            raise InvalidModel("scenario entries must be finite")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    @property
    def H(self) -> int:
        return self.xi.shape[0]


@dataclass(frozen=True)
class WassersteinAmbiguity:
    theta: float
    epsilon: float
    scenarios: np.ndarray
    support: str = "full"
    order: int = 1

    def __post_init__(self):
        if self.order != 1:
            raise InvalidModel("only order-1 Wasserstein balls are supported")
        if not self.theta > 0:
            raise DomainError("radius must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError("epsilon must lie in (0, 1)")
        if self.support not in ("full", "nonneg"):
            raise InvalidModel("support must be 'full' or 'nonneg'")
        xi = self.scenarios.xi if isinstance(self.scenarios, ScenarioSet) else self.scenarios
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[0] < 1:
            raise InvalidModel("at least one scenario is required")
        if self.support == "nonneg" and np.any(xi < 0):
            raise InvalidModel("nonnegative support requires nonnegative scenarios")
        object.__setattr__(self, "scenarios", xi)

    @property
    def H(self) -> int:
        return self.scenarios.shape[0]


# ---------------------------------------------------------------------------
# Distances and the worst-case probability oracle


def projection_distance(xi, rho, y) -> float:
    """Euclidean distance from xi to the half-space {z : rho' z <= y}."""
    rho = np.asarray(rho, dtype=float)
    nrm = np.linalg.norm(rho)
    if nrm == 0:
        raise DomainError("rho must be nonzero")
    return max(0.0, (float(rho @ np.asarray(xi, dtype=float)) - y) / nrm)


def nonneg_projection(xi, rho, y):
    """Project xi onto {z >= 0 : rho' z <= y} for rho >= 0.

    Returns ``(distance, z, lam, zeta)`` where ``(lam, zeta)`` solve the dual
    problem  max lam (rho' xi - y) - zeta' xi  s.t. ||zeta - lam rho|| <= 1,
    lam >= 0, zeta >= 0.  The distance is infinite when the set is empty.
    """
    xi = np.asarray(xi, dtype=float)
    rho = np.clip(np.asarray(rho, dtype=float), 0.0, None)
    if not np.any(rho > 0):
        raise DomainError("rho must be nonzero")
    z0 = np.clip(xi, 0.0, None)
    k = xi.size
    if rho @ z0 <= y:
        # Only the sign constraint binds; its unit normal is the dual point.
        d = float(np.linalg.norm(xi - z0))
        return d, z0, 0.0, ((z0 - xi) / d if d > 0 else np.zeros(k))
    if y < 0:
        return np.inf, None, None, None
    # z(tau) = max(0, xi - tau rho); rho' z(tau) is piecewise linear and
    # nonincreasing.  Walk its breakpoints until it drops to y.
    act = (rho > 0) & (xi > 0)
    bp = np.where(act, xi / np.where(rho > 0, rho, 1.0), np.inf)
    order = np.argsort(bp[act])
    idx = np.flatnonzero(act)[order]
    A = float(rho[idx] @ xi[idx])
    B = float(rho[idx] @ rho[idx])
    tau = None
    for j in idx:
        if A - bp[j] * B <= y:
            tau = (A - y) / B
            break
        A -= rho[j] * xi[j]
        B -= rho[j] * rho[j]
    if tau is None:
        # Only reachable for y == 0: every coordinate with rho_j > 0 hits zero.
        z = np.where(rho > 0, 0.0, z0)
        u = xi - z
        d = float(np.linalg.norm(u))
        u = u / d
        lam = float(np.max(u[rho > 0] / rho[rho > 0]))
        return d, z, lam, np.clip(lam * rho - u, 0.0, None)
    z = np.clip(xi - tau * rho, 0.0, None)
    d = float(np.linalg.norm(xi - z))
    if d == 0.0:
        return 0.0, z, 0.0, np.zeros(k)
    lam = tau / d
    zeta = np.clip(tau * rho - xi, 0.0, None) / d
    return d, z, lam, zeta


def scenario_distances(rho, y, a: WassersteinAmbiguity) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if a.support == "full":
        nrm = np.linalg.norm(rho)
        if nrm == 0:
            raise DomainError("rho must be nonzero")
        return np.clip((a.scenarios @ rho - y) / nrm, 0.0, None)
    return np.array([nonneg_projection(x, rho, y)[0] for x in a.scenarios])


def worst_case_from_distances(d, theta: float) -> float:
    """min over lam >= 0 of lam theta + mean(max(0, 1 - lam d_i)), at the breakpoints."""
    d = np.asarray(d, dtype=float)
    pos = d[(d > 0) & np.isfinite(d)]
    lams = np.r_[0.0, 1.0 / pos]
    with np.errstate(invalid="ignore"):
        prod = lams[:, None] * d[None, :]
    prod = np.where(np.isnan(prod), 0.0, prod)  # 0 * inf at lam = 0
    vals = lams * theta + np.mean(np.clip(1.0 - prod, 0.0, None), axis=1)
    return float(min(1.0, vals.min()))


def wasserstein_worst_case_prob(rho, y, a: WassersteinAmbiguity) -> float:
    """Exact sup over the ball of P(rho' R <= y)."""
    return worst_case_from_distances(scenario_distances(rho, y, a), a.theta)


def max_y_for_rho(rho, a: WassersteinAmbiguity, tol: float = 1e-12) -> float:
    """Largest y whose worst-case violation probability stays <= epsilon."""
    rho = np.asarray(rho, dtype=float)
    v = a.scenarios @ rho
    nrm = np.linalg.norm(rho)
    lo = float(v.min() - (a.theta / a.epsilon) * nrm - 1.0)
    hi = float(v.max())
    # Full-support distances never exceed nonnegative ones, so lo is feasible
    # for both supports; hi is infeasible since every scenario is violated.
    if wasserstein_worst_case_prob(rho, hi, a) <= a.epsilon:
        return hi
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if wasserstein_worst_case_prob(rho, mid, a) <= a.epsilon:
            lo = mid
        else:
            hi = mid
    return lo


def big_m(a: WassersteinAmbiguity) -> float:
    return a.theta / a.epsilon + 2.0 * float(np.max(np.linalg.norm(a.scenarios, axis=1)))


# ---------------------------------------------------------------------------
# Full support: mixed-integer SOCP


def _scenario_mean_start(poly, a):
    """A feasible occupation measure: the nominal LP on the scenario mean."""
    res = linprog(-a.scenarios.mean(axis=0), A_eq=poly.eq_matrix, b_eq=poly.eq_rhs, bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverFailure(f"start LP failed: {res.message}")
    return np.clip(res.x, 0.0, None)


def build_misocp(poly, a: WassersteinAmbiguity, y_floor: float | None = None) -> ConeProgram:
    """Big-M mixed-integer SOCP for the full-support Wasserstein model.

    The lower-bound row on y is imposed as the constant cut ``y >= y_floor``
    with ``y_floor`` the exact value of a feasible occupation measure, so it
    never removes the optimum.
    """
    if a.support != "full":
        raise InvalidModel("mixed-integer reformulation needs full support")
    K, H = poly.n_pairs, a.H
    xi = a.scenarios
    if xi.shape[1] != K:
        raise InvalidModel(f"scenarios have {xi.shape[1]} columns, expected {K}")
    M = big_m(a)
    if y_floor is None:
        y_floor = max_y_for_rho(_scenario_mean_start(poly, a), a)
    b = ProgramBuilder()
    y = b.var("y")
    rho = b.var("rho", K)
    beta = b.var("beta")
    t = b.var("t")
    bb = b.var("b", H)
    eta = b.var("eta", H, binary=True)
    b.objective(1.0, y)
    b.add("zero", [(poly.eq_matrix, rho)], -poly.eq_rhs, name="occupation")
    b.add("nonneg", [(1.0, rho)], np.zeros(K), name="rho>=0")
    # (i) t eps - beta theta + mean(b) >= 0
    b.add("nonneg", [(a.epsilon, t), (-a.theta, beta), (np.full(H, 1.0 / H), bb)], 0.0, name="budget")
    ones = np.ones((H, 1))
    # (ii) M eta_i - b_i - t >= 0
    b.add("nonneg", [(M, eta), (-1.0, bb), (-ones, t)], np.zeros(H), name="indicator-off")
    # (iii) M - M eta_i + xi_i' rho - y - b_i - t >= 0
    b.add("nonneg", [(-M, eta), (xi, rho), (-ones, y), (-1.0, bb), (-ones, t)], np.full(H, M), name="indicator-on")
    b.add("soc", [(np.r_[1.0, np.zeros(K)][:, None], beta), (sp.vstack([sp.csr_matrix((1, K)), sp.eye(K)]), rho)],
          np.zeros(K + 1), name="norm")
    b.add("nonneg", [(1.0, beta)], -TOL.beta_floor, name="beta>0")
    b.add("nonneg", [(1.0, t)], 0.0, name="t>=0")
    b.add("nonneg", [(-1.0, bb)], np.zeros(H), name="b<=0")
    b.add("nonneg", [(1.0, y)], -y_floor, name="y-floor")
    return b.build("max")


def _pattern_search(prog, a, rho, max_rounds=30):
    """Local search over indicator patterns: eta_i = 1 exactly for scenarios
    not violated at the exact level of the current rho; re-solve with the
    pattern fixed until the level stops improving."""
    sl_rho, sl_eta = prog.block("rho"), prog.block("eta")
    best_x, best_y = None, -np.inf
    seen = set()
    for _ in range(max_rounds):
        y = max_y_for_rho(rho, a)
        pattern = tuple((a.scenarios @ rho >= y - 1e-9).astype(int))
        if pattern in seen:
            break
        seen.add(pattern)
        fixed = fix_binaries(prog, {int(i): v for i, v in zip(range(sl_eta.start, sl_eta.stop), pattern)})
        res = solve_continuous(fixed)
        if res.status != "optimal":
            break
        if res.objective <= best_y + 1e-9:
            break
        best_x, best_y = res.x, res.objective
        rho = np.clip(res.x[sl_rho], 0.0, None)
    return best_x


def solve_wasserstein_full(poly, a: WassersteinAmbiguity, model: str = "w-full", *, node_limit: int = 100_000,
                           time_limit: float | None = None, heuristic: bool = True) -> DrccmdpSolution:
    t0 = time.perf_counter()
    rho0 = _scenario_mean_start(poly, a)
    prog = build_misocp(poly, a, y_floor=max_y_for_rho(rho0, a))
    sl_rho = prog.block("rho")
    starts = [rho0]

    def heur(x):
        # The first call also searches from the scenario-mean start.
        cands = [_pattern_search(prog, a, np.clip(x[sl_rho], 0.0, None))]
        while starts:
            cands.append(_pattern_search(prog, a, starts.pop()))
        cands = [c for c in cands if c is not None]
        return max(cands, key=prog.objective) if cands else None

    res = solve_misocp(prog, node_limit=node_limit, time_limit=time_limit, heuristic=heur if heuristic else None)
    if res.x is None:
        return DrccmdpSolution(model, res.status, float("nan"), None, None, time.perf_counter() - t0,
                               {"nodes": res.nodes})
    rho = np.clip(res.x[sl_rho], 0.0, None)
    y_exact = max_y_for_rho(rho, a)
    return DrccmdpSolution.from_rho(
        model, res.status, y_exact, rho, poly, time.perf_counter() - t0,
        y_misocp=res.objective, bound=res.bound, nodes=res.nodes, certified=res.certified,
        big_m=big_m(a), root_bound=res.info.get("root_bound"),
    )


# ---------------------------------------------------------------------------
# Nonnegative support: biconvex program and alternating convex search


@dataclass
class BiconvexProgram:
    """Biconvex reformulation for nonnegative support.

    Variables (y, rho, l, g_i, lam_i, zeta_i).  The only bilinear products are
    lam_i * rho and lam_i * y, so for fixed multipliers ``lam`` the remaining
    problem is a second-order cone program.
    """

    poly: object
    amb: WassersteinAmbiguity
    l_floor: float = TOL.beta_floor

    def dual_step(self, rho, y):
        """Per-scenario maximizers (lam_i, zeta_i) of lam (rho' xi - y) - zeta' xi."""
        K = self.poly.n_pairs
        lams, zetas, dists = np.zeros(self.amb.H), np.zeros((self.amb.H, K)), np.zeros(self.amb.H)
        for i, x in enumerate(self.amb.scenarios):
            d, _, lam, zeta = nonneg_projection(x, rho, y)
            if not np.isfinite(d):
                raise DomainError("empty projection set: y < 0 with nonnegative rho")
            dists[i], lams[i], zetas[i] = d, lam, zeta
        return lams, zetas, dists

    def primal_program(self, lams, zetas=None, free_zeta: bool = True) -> ConeProgram:
        """SOCP in (y, rho, l, g[, zeta]) for fixed multipliers.

        With ``free_zeta`` the zeta_i are optimized together with (y, rho);
        otherwise they are pinned to ``zetas``.
        """
        a = self.amb
        K, H = self.poly.n_pairs, a.H
        xi = a.scenarios
        b = ProgramBuilder()
        y = b.var("y")
        rho = b.var("rho", K)
        l = b.var("l")
        g = b.var("g", H)
        b.objective(1.0, y)
        b.add("zero", [(self.poly.eq_matrix, rho)], -self.poly.eq_rhs, name="occupation")
        b.add("nonneg", [(1.0, rho)], np.zeros(K), name="rho>=0")
        # (i) l eps - theta + mean(g) >= 0
        b.add("nonneg", [(a.epsilon, l), (np.full(H, 1.0 / H), g)], -a.theta, name="budget")
        b.add("nonneg", [(1.0, l)], -self.l_floor, name="l>0")
        b.add("nonneg", [(-1.0, g)], np.zeros(H), name="g<=0")
        ones = np.ones((H, 1))
        if free_zeta:
            zeta = b.var("zeta", H * K)
            b.add("nonneg", [(1.0, zeta)], np.zeros(H * K), name="zeta>=0")
            # (ii) lam_i xi_i' rho - lam_i y - zeta_i' xi_i - l - g_i >= 0
            Z = sp.block_diag([sp.csr_matrix(-x[None, :]) for x in xi], format="csr")
            b.add("nonneg", [(lams[:, None] * xi, rho), (-lams[:, None], y), (Z, zeta), (-ones, l), (-1.0, g)],
                  np.zeros(H), name="scenario")
            for i in range(H):
                zi = zeta[i * K:(i + 1) * K]
                b.add("soc", [(sp.vstack([sp.csr_matrix((1, K)), sp.eye(K)]), zi),
                              (sp.vstack([sp.csr_matrix((1, K)), -lams[i] * sp.eye(K)]), rho)],
                      np.r_[1.0, np.zeros(K)], name=f"dual-norm-{i}")
        else:
            const = -np.einsum("ij,ij->i", zetas, xi)
            b.add("nonneg", [(lams[:, None] * xi, rho), (-lams[:, None], y), (-ones, l), (-1.0, g)],
                  const, name="scenario")
            for i in np.flatnonzero(lams > 0):
                b.add("soc", [(sp.vstack([sp.csr_matrix((1, K)), -lams[i] * sp.eye(K)]), rho)],
                      np.r_[1.0, zetas[i]], name=f"dual-norm-{i}")
        return b.build("max")


def build_biconvex(poly, a: WassersteinAmbiguity) -> BiconvexProgram:
    if a.support != "nonneg":
        raise InvalidModel("biconvex reformulation needs nonnegative support")
    if a.scenarios.shape[1] != poly.n_pairs:
        raise InvalidModel(f"scenarios have {a.scenarios.shape[1]} columns, expected {poly.n_pairs}")
    return BiconvexProgram(poly, a)


def solve_biconvex_acs(prog: BiconvexProgram, start=None, *, max_rounds: int = 200, tol: float = 1e-7,
                       free_zeta: bool = True, model: str = "w-nonneg", **misocp_kw) -> DrccmdpSolution:
    """Alternating convex search.

    ``start`` is an optional (rho, y) pair; by default the full-support
    mixed-integer solution on the same scenarios is used.  A round consists of
    a dual step (exact per-scenario projections) and a primal SOCP step; the
    iterate is only replaced when y does not decrease, so the recorded
    sequence is nondecreasing.
    """
    t0 = time.perf_counter()
    a, poly = prog.amb, prog.poly
    if start is None:
        full = WassersteinAmbiguity(a.theta, a.epsilon, a.scenarios, "full")
        init = solve_wasserstein_full(poly, full, **misocp_kw)
        if init.rho is None:
            return DrccmdpSolution(model, init.status, float("nan"), None, None, time.perf_counter() - t0)
        rho, y = init.rho, init.y
    else:
        rho, y = np.asarray(start[0], dtype=float), float(start[1])
    ys = [y]
    status = "stalled"
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        lams, zetas, _ = prog.dual_step(rho, y)
        p = prog.primal_program(lams, zetas, free_zeta=free_zeta)
        res = solve_continuous(p)
        if res.status != "optimal":
            status = "optimal" if rounds > 1 else res.status
            log.info("ACS primal step ended with %s", res.status)
            break
        y_new = res.objective
        if y_new < y:
            # Solver tolerance only; keep the previous iterate.
            status = "optimal"
            break
        rho_new = np.clip(res.x[p.block("rho")], 0.0, None)
        improved = y_new - y
        rho, y = rho_new, y_new
        ys.append(y)
        if improved < tol:
            status = "optimal"
            break
    # Report the oracle-certified level of the final rho.
    y_exact = max_y_for_rho(rho, a)
    return DrccmdpSolution.from_rho(model, status, y_exact, rho, poly,
                                    time.perf_counter() - t0, rounds=rounds, y_sequence=ys, y_acs=y,
                                    worst_case=wasserstein_worst_case_prob(rho, y_exact, a))


def solve_wasserstein(poly, a: WassersteinAmbiguity, model: str | None = None, **kw) -> DrccmdpSolution:
    if a.support == "full":
        return solve_wasserstein_full(poly, a, model or "w-full", **kw)
    return solve_biconvex_acs(build_biconvex(poly, a), model=model or "w-nonneg", **kw)
