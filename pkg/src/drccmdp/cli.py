"""Command line entry point: ``drccmdp solve | validate | bench``.

Exit codes: 0 success, 2 infeasible (or a failed certificate), 3 solver
failure, 4 bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import ALL_MODELS, ExperimentConfig, run_experiment
from .errors import DomainError, InfeasibleTransform, InvalidModel, SolverFailure
from .mdp import build_occupation_polytope, load_mdp
from .moments import MomentAmbiguity, build_copositive_program, build_full_support_socp, solve_moments
from .formats import load_ambiguity
from .phidiv import PhiAmbiguity, build_phi_socp, solve_phi
from .solution import DrccmdpSolution
from .validation import certify
from .wasserstein import build_biconvex, build_misocp, solve_wasserstein

EXIT_OK, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_INPUT = 0, 2, 3, 4

log = logging.getLogger("drccmdp")


def _solve(poly, amb):
    if isinstance(amb, MomentAmbiguity):
        return solve_moments(poly, amb)
    if isinstance(amb, PhiAmbiguity):
        return solve_phi(poly, amb)
    return solve_wasserstein(poly, amb)


def _program_for(poly, amb, sol):
    """The conic program behind a solution, for the debug dump."""
    if isinstance(amb, MomentAmbiguity):
        if amb.support == "full":
            return build_full_support_socp(poly, amb)
        return build_copositive_program(poly, amb, float(sol.diagnostics.get("lambda", 1.0)))
    if isinstance(amb, PhiAmbiguity):
        return build_phi_socp(poly, amb)
    if amb.support == "full":
        return build_misocp(poly, amb)
    if sol.rho is None:
        return None
    prog = build_biconvex(poly, amb)
    lams, zetas, _ = prog.dual_step(sol.rho, sol.y)
    return prog.primal_program(lams, zetas)


def _status_code(status: str) -> int:
    if status in ("optimal", "node-limit", "time-limit", "stalled"):
        return EXIT_OK
    if status == "infeasible":
        return EXIT_INFEASIBLE
    return EXIT_SOLVER


def cmd_solve(args) -> int:
    mdp = load_mdp(args.mdp)
    poly = build_occupation_polytope(mdp)
    amb = load_ambiguity(args.ambiguity, mdp.labels())
    sol = _solve(poly, amb)
    text = sol.dumps()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    if args.dump_ir:
        prog = _program_for(poly, amb, sol)
        if prog is not None:
            Path(args.dump_ir).write_text(prog.dumps())
    return _status_code(sol.status)


def cmd_validate(args) -> int:
    with open(args.solution) as fh:
        sol = DrccmdpSolution.from_dict(json.load(fh))
    amb = load_ambiguity(args.ambiguity)
    report = certify(sol, amb, samples=args.samples, seed=args.seed)
    print(report.dumps())
    return EXIT_INFEASIBLE if report.passed is False else EXIT_OK


def cmd_bench(args) -> int:
    models = tuple(m.strip() for m in args.models.split(",") if m.strip())
    bad = [m for m in models if m not in ALL_MODELS]
    if bad:
        raise InvalidModel(f"unknown models {bad}; choose from {', '.join(ALL_MODELS)}")
    cfg = ExperimentConfig(n_states=args.states, seed=args.seed, models=models, H=args.H,
                           epsilon=args.epsilon, theta_w=args.theta_w, theta_phi=args.theta_phi,
                           misocp_time_limit=args.time_limit)
    res = run_experiment(cfg)
    out = res.write(args.out)
    print(f"wrote {out / 'results.csv'} and {out / 'results.json'}")
    for name, err in res.errors.items():
        print(f"{name}: {err}", file=sys.stderr)
    return EXIT_OK if len(res.errors) < len(models) else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drccmdp", description="Distributionally robust chance-constrained MDPs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one MDP under one ambiguity set")
    s.add_argument("--mdp", required=True)
    s.add_argument("--ambiguity", required=True)
    s.add_argument("--out")
    s.add_argument("--dump-ir", nargs="?", const="ir.json", default=None, metavar="PATH",
                   help="write the conic program as JSON (default path: ir.json)")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("validate", help="certify a stored solution")
    v.add_argument("--solution", required=True)
    v.add_argument("--ambiguity", required=True)
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="run the machine-replacement benchmark")
    b.add_argument("problem", choices=["machine-replacement"])
    b.add_argument("--states", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--models", default=",".join(ALL_MODELS))
    b.add_argument("--out", default="bench-out")
    b.add_argument("--H", type=int, default=1000)
    b.add_argument("--epsilon", type=float, default=0.1)
    b.add_argument("--theta-w", type=float, default=0.01)
    b.add_argument("--theta-phi", type=float, default=0.01)
    b.add_argument("--time-limit", type=float, default=60.0, help="branch-and-bound time limit in seconds")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InfeasibleTransform as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidModel, DomainError, OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"bad input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
