"""The result record returned by every solve path."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mdp import StationaryPolicy, extract_policy


@dataclass
class DrccmdpSolution:
    model: str
    status: str
    y: float
    rho: np.ndarray | None
    policy: StationaryPolicy | None = None
    wall_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_rho(cls, model, status, y, rho, structure, wall_time=0.0, **diag):
        rho = None if rho is None else np.clip(np.asarray(rho, dtype=float), 0.0, None)
        pol = None if rho is None else extract_policy(rho, structure)
        return cls(model, status, float(y), rho, pol, wall_time, dict(diag))

    @property
    def ok(self) -> bool:
        return self.rho is not None and self.status in ("optimal", "node-limit", "time-limit", "stalled")

    def repair_probability(self, state: int, action: int = 0) -> float:
        return float(self.policy.table()[state][action])

    def to_dict(self) -> dict:
        diag = {k: v for k, v in self.diagnostics.items() if isinstance(v, (int, float, str, bool, list, type(None)))}
        return {
            "model": self.model,
            "status": self.status,
            "y": self.y,
            "rho": None if self.rho is None else self.rho.tolist(),
            "policy": None if self.policy is None else self.policy.table(),
            "wall_time": self.wall_time,
            "diagnostics": diag,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict, structure=None) -> "DrccmdpSolution":
        rho = None if d.get("rho") is None else np.asarray(d["rho"], dtype=float)
        pol = extract_policy(rho, structure) if (rho is not None and structure is not None) else None
        return cls(d["model"], d["status"], float(d["y"]), rho, pol, float(d.get("wall_time", 0.0)),
                   dict(d.get("diagnostics", {})))
