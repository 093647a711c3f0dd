"""Central numerical tolerances.

Every module reads its defaults from :data:`TOL`; tests and callers may pass
a modified copy built with :func:`dataclasses.replace`.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    feasibility: float = 1e-8
    normalization: float = 1e-9
    zero_denominator: float = 1e-12
    clamp_negative: float = 1e-10
    cone: float = 1e-7
    solver_gap: float = 1e-10
    integrality: float = 1e-6
    mip_gap: float = 1e-6
    beta_floor: float = 1e-9


TOL = Tolerances()
