"""Machine-replacement benchmark: instance generator and experiment runner.

A machine ages through ``n`` states.  In every state the owner may repair
(action 0) or not repair (action 1).  Revenues and mean repair costs follow
fixed affine tables, and the reward covariance is ``A A' / |K| + D`` with a
uniform random ``A`` and a diagonal ``D`` that inflates the variance of the
last, risky state.

Transitions are a modelling choice made here: repairing renews the machine
with probability ``p_renew`` and otherwise leaves it where it is; not
repairing ages it by one state; at the last state a neglected machine breaks
down and is replaced by a new one with probability ``p_breakdown``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DrccmdpError, InfeasibleTransform
from .mdp import MdpModel, build_occupation_polytope, solve_nominal_lp
from .moments import MomentAmbiguity, cholesky, solve_gaussian, solve_moments
from .phidiv import PhiAmbiguity, solve_phi
from .solution import DrccmdpSolution
from .wasserstein import ScenarioSet, WassersteinAmbiguity, solve_wasserstein

log = logging.getLogger(__name__)

ACTIONS = ("repair", "no-repair")
FIXED_COST = 10.0


@dataclass(frozen=True)
class MachineReplacementInstance:
    n_states: int
    seed: int
    revenue: np.ndarray  # (n, 2)
    cost_mean: np.ndarray  # (n, 2)
    mu: np.ndarray  # |K|, state-major
    sigma: np.ndarray
    mdp: MdpModel
    fixed_cost: float = FIXED_COST
    jitter: int = 0

    @property
    def n_pairs(self) -> int:
        return 2 * self.n_states


def machine_kernel(n: int, p_renew: float = 0.5, p_breakdown: float = 0.1) -> np.ndarray:
    """Transition rows for the flattened pairs (state-major)."""
    P = np.zeros((2 * n, n))
    for s in range(n):
        P[2 * s, 0] += p_renew
        P[2 * s, s] += 1.0 - p_renew
        if s < n - 1:
            P[2 * s + 1, s + 1] = 1.0
        else:
            P[2 * s + 1, 0] += p_breakdown
            P[2 * s + 1, s] += 1.0 - p_breakdown
    return P


def generate_instance(n_states: int = 10, seed: int = 0, alpha: float = 0.85,
                      p_renew: float = 0.5, p_breakdown: float = 0.1) -> MachineReplacementInstance:
    if n_states < 2:
        raise ValueError("need at least two states")
    n = n_states
    s = np.arange(1, n + 1)
    L = np.column_stack([np.full(n, 30.0), 30.0 - 0.1 * (s - 1)])
    Z = np.column_stack([10.0 + 0.1 * (s - 1), np.zeros(n)])
    Z[-1, 1] = 5.0
    mu = (L - FIXED_COST - Z).reshape(-1)
    k = 2 * n
    rng = np.random.default_rng(seed)
    A = rng.random((k, k))
    D = np.ones(k)
    # The risky last state carries extra variance on both actions.
    D[k - 2] = 4.0
    D[k - 1] = 9.0
    sigma = A @ A.T / k + np.diag(D)
    sigma = 0.5 * (sigma + sigma.T)
    jitter = 0
    while True:
        try:
            cholesky(sigma)
            break
        except DrccmdpError:
            sigma = sigma + 1e-3 * np.eye(k)
            jitter += 1
    mdp = MdpModel(n, [ACTIONS] * n, machine_kernel(n, p_renew, p_breakdown), alpha, np.full(n, 1.0 / n))
    return MachineReplacementInstance(n, seed, L, Z, mu, sigma, mdp, FIXED_COST, jitter)


def generate_scenarios(inst: MachineReplacementInstance, H: int, seed: int, nonneg: bool = False) -> ScenarioSet:
    """Gaussian scenarios mu + B x with B the Cholesky factor of sigma."""
    if H < 1:
        raise ValueError("need at least one scenario")
    rng = np.random.default_rng(seed)
    B = np.linalg.cholesky(inst.sigma)
    xi = rng.standard_normal((H, inst.n_pairs)) @ B.T + inst.mu
    clipped = 0
    if nonneg:
        clipped = int(np.sum(xi < 0))
        xi = np.clip(xi, 0.0, None)
    return ScenarioSet(xi, seed, "gaussian-cholesky" + ("-clipped" if nonneg else ""), clipped)


# ---------------------------------------------------------------------------
# Experiments

MOMENT_MODELS = {"d1": "D1", "d2": "D2", "d3": "D3"}
PHI_MODELS = {"kl": "kullback_leibler", "var": "variation", "mchi2": "modified_chi2", "hellinger": "hellinger"}
ALL_MODELS = ("lp", "gaussian", "d1", "d2", "d3", "d1-nonneg", "d2-nonneg", "d3-nonneg",
              "kl", "var", "mchi2", "hellinger", "w-full", "w-nonneg")
DEFAULT_MODELS = ("gaussian", "d1", "d2", "d3", "d1-nonneg", "d2-nonneg", "d3-nonneg",
                  "kl", "var", "mchi2", "hellinger", "w-full", "w-nonneg")


@dataclass
class ExperimentConfig:
    n_states: int = 10
    seed: int = 0
    models: tuple = DEFAULT_MODELS
    epsilon: float = 0.1
    alpha: float = 0.85
    delta0: float = 0.9
    delta1: float = 1.0
    delta2: float = 1.0
    theta_phi: float = 0.01
    theta_w: float = 0.01
    H: int = 1000
    scenario_seed: int | None = None
    misocp_time_limit: float | None = 60.0
    node_limit: int = 100_000


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    instance: MachineReplacementInstance
    solutions: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def csv_text(self, timings: bool = True) -> str:
        """Results table; with ``timings=False`` the wall_ms column is left
        blank so that repeated runs give identical bytes."""
        labels = self.instance.mdp.labels()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "y"] + labels + ["wall_ms", "status"])
        for name in self.config.models:
            sol = self.solutions.get(name)
            if sol is None or sol.policy is None:
                status = sol.status if sol is not None else f"error: {self.errors.get(name, '')}"
                wall = "" if sol is None or not timings else f"{1000 * sol.wall_time:.0f}"
                w.writerow([name, "nan"] + [""] * len(labels) + [wall, status])
                continue
            wall = f"{1000 * sol.wall_time:.0f}" if timings else ""
            w.writerow([name, repr(round(sol.y, 10))] + [repr(round(float(p), 10)) for p in sol.policy.probs]
                       + [wall, sol.status])
        return buf.getvalue()

    def policy_table(self) -> dict:
        return {k: v.policy.table() for k, v in self.solutions.items() if v.policy is not None}

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["models"] = list(self.config.models)
        return {"config": cfg, "solutions": {k: v.to_dict() for k, v in self.solutions.items()},
                "errors": self.errors}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.csv_text())
        # Wall times vary run to run; they are kept out of the JSON so that
        # repeated runs produce identical files.
        d = self.to_dict()
        for s in d["solutions"].values():
            s.pop("wall_time", None)
        (out / "results.json").write_text(json.dumps(d, indent=2, default=float))
        return out


def solve_model(name: str, inst: MachineReplacementInstance, cfg: ExperimentConfig, poly=None,
                scenarios: ScenarioSet | None = None) -> DrccmdpSolution:
    poly = poly or build_occupation_polytope(inst.mdp)
    mu, S, eps = inst.mu, inst.sigma, cfg.epsilon
    t0 = time.perf_counter()
    if name == "lp":
        val, rho = solve_nominal_lp(inst.mdp, mu)
        return DrccmdpSolution.from_rho("lp", "optimal", val, rho, poly, time.perf_counter() - t0)
    if name == "gaussian":
        return solve_gaussian(poly, mu, S, eps)
    base = name.replace("-nonneg", "")
    if base in MOMENT_MODELS:
        support = "nonneg" if name.endswith("-nonneg") else "full"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = MomentAmbiguity(MOMENT_MODELS[base], mu, S, eps, cfg.delta0, cfg.delta1, cfg.delta2, support)
        return solve_moments(poly, a, name)
    if name in PHI_MODELS:
        return solve_phi(poly, PhiAmbiguity(PHI_MODELS[name], cfg.theta_phi, eps, mu, S), name)
    if name in ("w-full", "w-nonneg"):
        nonneg = name == "w-nonneg"
        if scenarios is None:
            seed = cfg.seed if cfg.scenario_seed is None else cfg.scenario_seed
            scenarios = generate_scenarios(inst, cfg.H, seed, nonneg=nonneg)
        elif nonneg:
            scenarios = ScenarioSet(np.clip(scenarios.xi, 0, None), scenarios.seed, scenarios.generator,
                                    int(np.sum(scenarios.xi < 0)))
        a = WassersteinAmbiguity(cfg.theta_w, eps, scenarios.xi, "nonneg" if nonneg else "full")
        kw = {"time_limit": cfg.misocp_time_limit, "node_limit": cfg.node_limit}
        sol = solve_wasserstein(poly, a, name, **kw)
        sol.diagnostics["clipped"] = scenarios.clipped
        return sol
    raise ValueError(f"unknown model {name!r}")


def run_experiment(config: ExperimentConfig | None = None, instance: MachineReplacementInstance | None = None
                   ) -> ExperimentResult:
    """Solve every requested model on one instance; failures are recorded per model."""
    cfg = config or ExperimentConfig()
    inst = instance or generate_instance(cfg.n_states, cfg.seed, cfg.alpha)
    poly = build_occupation_polytope(inst.mdp)
    out = ExperimentResult(cfg, inst)
    for name in cfg.models:
        try:
            out.solutions[name] = solve_model(name, inst, cfg, poly)
        except InfeasibleTransform as exc:
            out.errors[name] = str(exc)
        except Exception as exc:  # noqa: BLE001 - isolate per-model failures
            log.exception("model %s failed", name)
            out.errors[name] = f"{type(exc).__name__}: {exc}"
    return out
