"""Solver-agnostic conic programs and their solution.

A :class:`ConeProgram` stores a linear objective and a list of affine blocks
``A @ x + b`` constrained to lie in one of four cones:

* ``zero``   : every entry equals 0
* ``nonneg`` : every entry is >= 0
* ``soc``    : ``(t, u)`` with ``t >= ||u||``, ``t`` first
* ``psd``    : an ``n x n`` symmetric matrix stacked as its lower triangle in
  column-major order, off-diagonal entries multiplied by sqrt(2) so that the
  Euclidean inner product of two stacked vectors equals the trace inner
  product of the matrices.

Continuous programs go to Clarabel.  Programs with binary variables go
through a small best-first branch-and-bound built on the continuous solve.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .config import TOL
from .errors import InvalidModel

log = logging.getLogger(__name__)

CONE_KINDS = ("zero", "nonneg", "soc", "psd")
SQRT2 = np.sqrt(2.0)


def tri_len(n: int) -> int:
    return n * (n + 1) // 2


def lower_tri_pairs(n: int) -> list:
    """(i, j) pairs with i >= j in stacking order (column-major lower)."""
    return [(i, j) for j in range(n) for i in range(j, n)]


def svec(M) -> np.ndarray:
    """Stack a symmetric matrix as scaled lower-triangular column-major."""
    M = np.asarray(M, dtype=float)
    return np.array([M[i, j] * (1.0 if i == j else SQRT2) for i, j in lower_tri_pairs(M.shape[0])])


def smat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    M = np.zeros((n, n))
    for val, (i, j) in zip(v, lower_tri_pairs(n)):
        M[i, j] = M[j, i] = val if i == j else val / SQRT2
    return M


def _lower_to_upper_perm(n: int) -> np.ndarray:
    # Clarabel stacks the upper triangle column-major; entry (i, j), i <= j,
    # equals our lower entry (j, i).
    pos = {p: k for k, p in enumerate(lower_tri_pairs(n))}
    return np.array([pos[(j, i)] for j in range(n) for i in range(j + 1)])


@dataclass(frozen=True)
class ConeConstraint:
    kind: str
    A: sp.csr_matrix
    b: np.ndarray
    dim: int
    name: str = ""

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    def value(self, x) -> np.ndarray:
        return self.A @ x + self.b

    def violation(self, x) -> float:
        """Distance-like measure of how far ``A x + b`` is from the cone."""
        v = self.value(x)
        if self.kind == "zero":
            return float(np.max(np.abs(v), initial=0.0))
        if self.kind == "nonneg":
            return float(max(0.0, -np.min(v, initial=0.0)))
        if self.kind == "soc":
            return float(max(0.0, np.linalg.norm(v[1:]) - v[0]))
        return float(max(0.0, -np.linalg.eigvalsh(smat(v))[0]))


@dataclass(frozen=True)
class ConeProgram:
    n_vars: int
    c: np.ndarray
    sense: str
    constraints: tuple
    binaries: tuple = ()
    var_blocks: tuple = ()

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise InvalidModel("sense must be 'min' or 'max'")
        for con in self.constraints:
            if con.kind not in CONE_KINDS:
                raise InvalidModel(f"unknown cone kind {con.kind!r}")
            if con.A.shape[1] != self.n_vars:
                raise InvalidModel(f"block {con.name!r} has {con.A.shape[1]} columns, expected {self.n_vars}")
            if con.kind == "soc" and con.rows < 2:
                raise InvalidModel(f"second-order block {con.name!r} needs dimension >= 2")
            if con.kind == "psd" and con.rows != tri_len(con.dim):
                raise InvalidModel(f"psd block {con.name!r} has {con.rows} rows for order {con.dim}")

    def block(self, name: str) -> slice:
        for nm, start, size in self.var_blocks:
            if nm == name:
                return slice(start, start + size)
        raise KeyError(name)

    def objective(self, x) -> float:
        return float(self.c @ x)

    def max_violation(self, x) -> float:
        return max((con.violation(x) for con in self.constraints), default=0.0)

    def with_constraints(self, extra) -> "ConeProgram":
        return replace(self, constraints=self.constraints + tuple(extra))

    # JSON debug dump ------------------------------------------------------

    def to_dict(self) -> dict:
        cons = []
        for con in self.constraints:
            A = con.A.tocoo()
            order = np.lexsort((A.col, A.row))
            cons.append({
                "kind": con.kind, "dim": con.dim, "name": con.name, "rows": con.rows,
                "A_row": A.row[order].tolist(), "A_col": A.col[order].tolist(),
                "A_val": A.data[order].tolist(), "b": con.b.tolist(),
            })
        return {
            "n_vars": self.n_vars, "sense": self.sense, "c": self.c.tolist(),
            "binaries": list(self.binaries),
            "var_blocks": [list(v) for v in self.var_blocks],
            "constraints": cons,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConeProgram":
        n = int(d["n_vars"])
        cons = tuple(
            ConeConstraint(
                c["kind"],
                sp.csr_matrix((c["A_val"], (c["A_row"], c["A_col"])), shape=(c["rows"], n)),
                np.asarray(c["b"], dtype=float), int(c["dim"]), c["name"],
            )
            for c in d["constraints"]
        )
        return cls(n, np.asarray(d["c"], dtype=float), d["sense"], cons,
                   tuple(int(i) for i in d["binaries"]),
                   tuple((str(a), int(b), int(s)) for a, b, s in d["var_blocks"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, s: str) -> "ConeProgram":
        return cls.from_dict(json.loads(s))


class ProgramBuilder:
    """Incremental construction of a :class:`ConeProgram`.

    Variables are declared as named blocks.  A constraint is a list of terms
    ``(coef, idx)`` plus a constant vector; ``coef`` may be a scalar (times the
    identity), a 1-D row vector (single-row block) or a 2-D matrix of shape
    ``(rows, len(idx))``, dense or sparse.
    """

    def __init__(self):
        self.n = 0
        self.blocks = []
        self.cons = []
        self.binaries = []
        self.c = {}

    def var(self, name: str, size: int = 1, binary: bool = False) -> np.ndarray:
        idx = np.arange(self.n, self.n + size)
        self.blocks.append((name, self.n, size))
        self.n += size
        if binary:
            self.binaries.extend(idx.tolist())
        return idx

    def objective(self, coef, idx):
        for i, v in zip(np.atleast_1d(idx), np.broadcast_to(coef, np.shape(np.atleast_1d(idx)))):
            self.c[int(i)] = self.c.get(int(i), 0.0) + float(v)

    def add(self, kind: str, terms, const, dim: int | None = None, name: str = ""):
        const = np.atleast_1d(np.asarray(const, dtype=float)).copy()
        m = const.size
        rows, cols, vals = [], [], []
        for coef, idx in terms:
            idx = np.atleast_1d(np.asarray(idx))
            if sp.issparse(coef):
                C = coef.tocoo()
            elif np.ndim(coef) == 0:
                C = sp.coo_matrix(float(coef) * sp.eye(m, len(idx)))
            elif np.ndim(coef) == 1:
                C = sp.coo_matrix(np.asarray(coef, dtype=float)[None, :])
            else:
                C = sp.coo_matrix(np.asarray(coef, dtype=float))
            if C.shape != (m, len(idx)):
                raise InvalidModel(f"term of shape {C.shape} does not fit block {name!r} ({m} x {len(idx)})")
            rows.append(C.row)
            cols.append(idx[C.col])
            vals.append(C.data)
        self.cons.append((kind, m, rows, cols, vals, const, dim, name))

    def build(self, sense: str = "max") -> ConeProgram:
        n = self.n
        c = np.zeros(n)
        for i, v in self.c.items():
            c[i] = v
        out = []
        for kind, m, rows, cols, vals, const, dim, name in self.cons:
            cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
            A = sp.csr_matrix((cat(vals, float), (cat(rows, int), cat(cols, int))), shape=(m, n))
            A.sum_duplicates()
            A.eliminate_zeros()
            if dim is None:
                dim = m
            out.append(ConeConstraint(kind, A, const, int(dim), name))
        return ConeProgram(n, c, sense, tuple(out), tuple(sorted(self.binaries)), tuple(self.blocks))


# ---------------------------------------------------------------------------
# Continuous solve


@dataclass
class SolveResult:
    status: str
    objective: float
    x: np.ndarray | None
    dual: np.ndarray | None = None
    dual_objective: float | None = None
    iterations: int = 0
    nodes: int = 0
    wall_time: float = 0.0
    certified: bool = True
    max_violation: float = 0.0
    bound: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal" or (self.x is not None and self.status in ("node-limit", "time-limit"))


_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def _to_clarabel(prog: ConeProgram):
    import clarabel

    blocks, rhs, cones = [], [], []
    for con in prog.constraints:
        A, b = -con.A, con.b
        if con.kind == "psd":
            perm = _lower_to_upper_perm(con.dim)
            A, b = A[perm], b[perm]
            cones.append(clarabel.PSDTriangleConeT(con.dim))
        elif con.kind == "zero":
            cones.append(clarabel.ZeroConeT(con.rows))
        elif con.kind == "nonneg":
            cones.append(clarabel.NonnegativeConeT(con.rows))
        else:
            cones.append(clarabel.SecondOrderConeT(con.rows))
        blocks.append(A)
        rhs.append(b)
    A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, prog.n_vars))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    return A, b, cones


def solve_continuous(prog: ConeProgram, *, tol: float = TOL.solver_gap, max_iter: int = 200,
                     time_limit: float | None = None, extra=()) -> SolveResult:
    """Solve the continuous relaxation (binary markers are ignored)."""
    import clarabel

    if extra:
        prog = prog.with_constraints(extra)
    t0 = time.perf_counter()
    A, b, cones = _to_clarabel(prog)
    sign = -1.0 if prog.sense == "max" else 1.0
    P = sp.csc_matrix((prog.n_vars, prog.n_vars))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_iter = max_iter
    if time_limit is not None:
        settings.time_limit = float(time_limit)
    sol = clarabel.DefaultSolver(P, sign * prog.c, A, b, cones, settings).solve()
    status = _STATUS.get(str(sol.status).split(".")[-1], "numerical-failure")
    x = np.asarray(sol.x)
    z = np.asarray(sol.z)
    res = SolveResult(status, float("nan"), None, iterations=int(sol.iterations),
                      wall_time=time.perf_counter() - t0, info={"backend_status": str(sol.status)})
    if status == "optimal":
        viol = prog.max_violation(x)
        scale = 1.0 + float(np.max(np.abs(x), initial=0.0))
        res.max_violation = viol
        if viol > TOL.cone * scale:
            # Loose "almost solved" points are not passed on as optimal.
            res.status = "numerical-failure"
            res.info["violation"] = viol
            return res
        res.x = x
        res.objective = prog.objective(x)
        res.dual = z
        res.dual_objective = float(sign * -(b @ z))
        res.bound = res.objective
    elif status == "unbounded":
        res.objective = float("inf") if prog.sense == "max" else float("-inf")
    return res


# ---------------------------------------------------------------------------
# Branch and bound


def _fix_rows(n_vars: int, fixings: dict) -> ConeConstraint:
    idx = np.array(sorted(fixings), dtype=int)
    A = sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, n_vars))
    return ConeConstraint("zero", A, -np.array([float(fixings[i]) for i in idx]), idx.size, "fix")


def _box_rows(n_vars: int, binaries) -> ConeConstraint:
    idx = np.asarray(binaries, dtype=int)
    k = idx.size
    A = sp.csr_matrix((np.r_[np.ones(k), -np.ones(k)], (np.arange(2 * k), np.r_[idx, idx])), shape=(2 * k, n_vars))
    return ConeConstraint("nonneg", A, np.r_[np.zeros(k), np.ones(k)], 2 * k, "binary-box")


def solve_misocp(prog: ConeProgram, *, node_limit: int = 100_000, time_limit: float | None = None,
                 gap: float = TOL.mip_gap, int_tol: float = TOL.integrality,
                 heuristic=None, heuristic_every: int = 25) -> SolveResult:
    """Best-first branch-and-bound over the binaries of ``prog``.

    Nodes are ordered by relaxation bound with first-in-first-out tie-break;
    branching picks the most fractional binary (lowest index on ties).
    ``heuristic`` is an optional callable mapping a relaxation point to a
    feasible integral point (or ``None``); it is tried at the root and every
    ``heuristic_every`` nodes.
    """
    t0 = time.perf_counter()
    sgn = 1.0 if prog.sense == "max" else -1.0
    bins = np.asarray(prog.binaries, dtype=int)
    base = prog.with_constraints([_box_rows(prog.n_vars, bins)])

    def relax(fixings):
        extra = [_fix_rows(prog.n_vars, fixings)] if fixings else []
        return solve_continuous(base, extra=extra)

    inc_val, inc_x = -np.inf, None
    bound_trace = []

    def offer(x, trusted=False):
        nonlocal inc_val, inc_x
        if x is None:
            return
        xb = x[bins]
        if np.max(np.minimum(np.abs(xb), np.abs(1 - xb)), initial=0.0) > int_tol:
            return
        if not trusted and prog.max_violation(x) > 1e-6 * (1.0 + np.max(np.abs(x))):
            return
        v = sgn * prog.objective(x)
        if v > inc_val:
            inc_val, inc_x = v, x

    root = relax({})
    nodes = 1
    if root.status != "optimal":
        root.nodes = nodes
        root.wall_time = time.perf_counter() - t0
        return root
    counter = itertools.count()
    heap = [(-sgn * root.objective, next(counter), {}, root.x)]
    bound_trace.append(sgn * root.objective)
    if heuristic is not None:
        offer(heuristic(root.x))
    status, certified, failed = "optimal", True, 0

    def close(val):
        return val <= inc_val + gap * max(1.0, abs(inc_val))

    while heap:
        neg_bound, _, fixings, x = heapq.heappop(heap)
        bound = -neg_bound
        # Any popped bound is a valid global upper bound; keep the tightest.
        bound_trace.append(min(bound_trace[-1], max(bound, inc_val)))
        if inc_x is not None and close(bound):
            heap = []
            break
        xb = x[bins]
        frac = np.minimum(xb, 1.0 - xb)
        j = int(np.argmax(frac))
        if frac[j] <= int_tol:
            offer(x, trusted=True)
            continue
        if nodes >= node_limit or (time_limit is not None and time.perf_counter() - t0 > time_limit):
            heapq.heappush(heap, (neg_bound, next(counter), fixings, x))
            status, certified = ("node-limit" if nodes >= node_limit else "time-limit"), False
            break
        var = int(bins[j])
        for v in (1, 0):
            child = dict(fixings)
            child[var] = v
            r = relax(child)
            nodes += 1
            if r.status == "optimal":
                cb = sgn * r.objective
                if inc_x is None or not close(cb):
                    heapq.heappush(heap, (-cb, next(counter), child, r.x))
            elif r.status != "infeasible":
                failed += 1
        if heuristic is not None and nodes % heuristic_every < 2:
            offer(heuristic(x))

    open_bound = max((-h[0] for h in heap), default=-np.inf)
    best_bound = max(open_bound, inc_val)
    if failed:
        certified = False
    res = SolveResult(
        status if inc_x is not None else ("infeasible" if status == "optimal" and not failed else status),
        sgn * inc_val if inc_x is not None else float("nan"),
        inc_x, nodes=nodes, wall_time=time.perf_counter() - t0, certified=certified and inc_x is not None,
        bound=sgn * best_bound if np.isfinite(best_bound) else None,
        info={"bound_trace": bound_trace, "failed_nodes": failed, "root_bound": sgn * bound_trace[0]},
    )
    if inc_x is not None:
        res.max_violation = prog.max_violation(inc_x)
    if inc_x is None and failed:
        res.status = "numerical-failure"
    return res


def solve(prog: ConeProgram, **kw) -> SolveResult:
    """Dispatch to the continuous or the branch-and-bound solver."""
    if prog.binaries:
        return solve_misocp(prog, **kw)
    return solve_continuous(prog, **{k: v for k, v in kw.items() if k in ("tol", "max_iter", "time_limit")})


def fix_binaries(prog: ConeProgram, values: dict) -> ConeProgram:
    """Copy of ``prog`` with the given binaries pinned and no integrality left."""
    return replace(prog.with_constraints([_fix_rows(prog.n_vars, values)]), binaries=())
