"""Reading and writing the JSON and CSV files used by the command line."""

from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path

import numpy as np

from .errors import InvalidModel
from .moments import MomentAmbiguity
from .phidiv import ALIASES, PhiAmbiguity
from .wasserstein import ScenarioSet, WassersteinAmbiguity


def read_scenarios_csv(path, labels=None) -> ScenarioSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidModel(f"{path}: empty scenario file")
    header, body = rows[0], rows[1:]
    if labels is not None and list(header) != list(labels):
        raise InvalidModel(f"{path}: header does not match the state-action labels of the MDP")
    try:
        xi = np.array([[float(v) for v in r] for r in body if r], dtype=float)
    except ValueError as exc:
        raise InvalidModel(f"{path}: non-numeric scenario entry") from exc
    if xi.ndim != 2 or xi.shape[0] == 0 or xi.shape[1] != len(header):
        raise InvalidModel(f"{path}: every row needs {len(header)} entries")
    return ScenarioSet(xi, generator=str(path))


def write_scenarios_csv(path, scenarios: ScenarioSet, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(labels)
        for row in scenarios.xi:
            w.writerow([repr(float(v)) for v in row])


def ambiguity_from_dict(d: dict, base_dir=".", labels=None):
    """Build the ambiguity object described by a parsed JSON document."""
    kind = d.get("kind")
    try:
        if kind in ("D1", "D2", "D3"):
            with warnings.catch_warnings():
                warnings.simplefilter("default")
                return MomentAmbiguity(
                    kind, d["mu"], d["sigma"], float(d["epsilon"]),
                    float(d.get("delta0", 1.0)), float(d.get("delta1", 0.0)), float(d.get("delta2", 1.0)),
                    d.get("support", "full"),
                )
        if kind == "phi":
            div = d["divergence"]
            if div not in ALIASES and div not in ALIASES.values():
                raise InvalidModel(f"unknown divergence {div!r}")
            if "nominal" in d and d["nominal"] != "gaussian":
                raise InvalidModel("only a Gaussian nominal law is supported")
            return PhiAmbiguity(div, float(d["theta"]), float(d["epsilon"]), d["mu_nu"], d["sigma_nu"])
        if kind == "wasserstein":
            if int(d.get("order", 1)) != 1:
                raise InvalidModel("only order-1 Wasserstein balls are supported")
            path = Path(base_dir) / d["scenarios_csv"]
            sc = read_scenarios_csv(path, labels)
            return WassersteinAmbiguity(float(d["theta"]), float(d["epsilon"]), sc.xi, d.get("support", "full"))
    except KeyError as exc:
        raise InvalidModel(f"ambiguity description lacks field {exc}") from exc
    raise InvalidModel(f"unknown ambiguity kind {kind!r}")


def load_ambiguity(path, labels=None):
    p = Path(path)
    with open(p) as fh:
        d = json.load(fh)
    return ambiguity_from_dict(d, p.parent, labels)


def ambiguity_to_dict(a, scenarios_csv: str | None = None) -> dict:
    if isinstance(a, MomentAmbiguity):
        return {"kind": a.kind, "mu": a.mu.tolist(), "sigma": a.sigma.tolist(), "delta0": a.delta0,
                "delta1": a.delta1, "delta2": a.delta2, "support": a.support, "epsilon": a.epsilon}
    if isinstance(a, PhiAmbiguity):
        short = {v: k for k, v in ALIASES.items()}[a.divergence]
        return {"kind": "phi", "divergence": short, "theta": a.theta, "epsilon": a.epsilon,
                "mu_nu": a.mu.tolist(), "sigma_nu": a.sigma.tolist()}
    if isinstance(a, WassersteinAmbiguity):
        return {"kind": "wasserstein", "theta": a.theta, "epsilon": a.epsilon, "support": a.support,
                "scenarios_csv": scenarios_csv}
    raise TypeError(type(a).__name__)
