"""Independent checks of a computed (rho, y).

Exact worst-case probabilities are available for the known-moment sets with
unrestricted support (one-sided Chebyshev) and for Wasserstein balls (the
breakpoint oracle).  Phi-divergence solutions are only checked by sampling
the nominal Gaussian law.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .moments import MomentAmbiguity
from .phidiv import PhiAmbiguity
from .wasserstein import WassersteinAmbiguity, wasserstein_worst_case_prob

_CHUNK = 1 << 20


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based, so streams are reproducible across platforms.
    return np.random.Generator(np.random.Philox(seed))


def monte_carlo_chance(rho, y, mu, sigma, N: int, seed: int) -> float:
    """Fraction of N Gaussian reward draws with rho' R >= y.

    Only the scalar rho' R matters, and it is normal with mean mu' rho and
    variance rho' Sigma rho, so that scalar is sampled directly.
    """
    rho = np.asarray(rho, dtype=float)
    m = float(np.asarray(mu, dtype=float) @ rho)
    sd = math.sqrt(max(0.0, float(rho @ np.asarray(sigma, dtype=float) @ rho)))
    rng = _rng(seed)
    hits, left = 0, int(N)
    while left > 0:
        n = min(left, _CHUNK)
        hits += int(np.count_nonzero(m + sd * rng.standard_normal(n) >= y))
        left -= n
    return hits / N


def binomial_halfwidth(p: float, N: int, z: float = 3.0) -> float:
    return z * math.sqrt(max(p * (1.0 - p), 1e-300) / N)


def cantelli_worst_case(rho, y, mu, sigma, strict: bool = False) -> float:
    """sup of P(rho' R <= y) over all laws with the given mean and covariance.

    Requires mu' rho > y.  Otherwise the supremum is at least one half; with
    ``strict`` a DomainError is raised, else 1 is returned conservatively.
    """
    rho = np.asarray(rho, dtype=float)
    m = float(np.asarray(mu, dtype=float) @ rho)
    v = float(rho @ np.asarray(sigma, dtype=float) @ rho)
    if m <= y:
        if strict:
            raise DomainError("one-sided bound needs mu' rho > y")
        return 1.0
    return v / (v + (m - y) ** 2)


@dataclass
class ValidationReport:
    method: str
    epsilon: float
    worst_case: float | None
    empirical: float | None
    slack: float | None
    passed: bool | None
    samples: int
    seed: int
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def certify(solution, spec, samples: int = 100_000, seed: int = 0, tol: float = 1e-6) -> ValidationReport:
    """Check a solution against the ambiguity set it was computed for.

    ``slack`` is worst-case probability minus epsilon, so a positive slack
    means the guarantee fails.
    """
    rho, y = solution.rho, solution.y
    if rho is None:
        return ValidationReport("none", getattr(spec, "epsilon", float("nan")), None, None, None, False,
                                0, seed, f"solution has no occupation measure (status {solution.status})")
    if isinstance(spec, MomentAmbiguity):
        eps = spec.epsilon
        emp = monte_carlo_chance(rho, y, spec.mu, spec.sigma, samples, seed) if samples else None
        if spec.support == "full" and spec.kind in ("D1", "D2"):
            scale = spec.delta0 if spec.kind == "D2" else 1.0
            wc = cantelli_worst_case(rho, y, spec.mu, scale * spec.sigma)
            note = "" if spec.kind == "D1" else "covariance bound delta0 * Sigma is attained"
            return ValidationReport("cantelli", eps, wc, emp, wc - eps, wc <= eps + tol, samples, seed, note)
        return ValidationReport("unsupported", eps, None, emp, None, None, samples, seed,
                                f"no exact oracle for {spec.kind} with {spec.support} support")
    if isinstance(spec, WassersteinAmbiguity):
        wc = wasserstein_worst_case_prob(rho, y, spec)
        return ValidationReport("wasserstein-breakpoint", spec.epsilon, wc, None, wc - spec.epsilon,
                                wc <= spec.epsilon + tol, 0, seed)
    if isinstance(spec, PhiAmbiguity):
        eps = spec.epsilon
        n = samples or 100_000
        emp = monte_carlo_chance(rho, y, spec.mu, spec.sigma, n, seed)
        viol = 1.0 - emp
        ok = viol <= eps + binomial_halfwidth(eps, n)
        return ValidationReport("monte-carlo-nominal", eps, None, emp, viol - eps, ok, n, seed,
                                "nominal law only; no exact worst-case oracle over the divergence ball")
    return ValidationReport("unsupported", float("nan"), None, None, None, None, 0, seed,
                            f"unsupported ambiguity type {type(spec).__name__}")
