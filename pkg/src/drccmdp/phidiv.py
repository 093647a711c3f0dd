"""Phi-divergence balls around a Gaussian nominal law.

Under a phi-divergence ball of radius theta the robust chance constraint at
level 1 - eps behaves like the nominal Gaussian constraint at a tightened
level f(theta, eps).  The reformulation is the Gaussian SOCP with the normal
quantile of f in place of the nominal quantile.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DomainError, InfeasibleTransform, InvalidModel

DIVERGENCES = ("kullback_leibler", "variation", "modified_chi2", "hellinger")
ALIASES = {"kl": "kullback_leibler", "var": "variation", "mchi2": "modified_chi2", "hellinger": "hellinger"}
HELLINGER_MAX = 2.0 - math.sqrt(2.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile level {p} outside (0, 1)")
    return float(ndtri(p))


def _check(theta, eps):
    if not theta > 0.0:
        raise DomainError("radius theta must be positive")
    if not 0.0 < eps < 1.0:
        raise DomainError("epsilon must lie in (0, 1)")


def f_variation(theta: float, eps: float) -> float:
    _check(theta, eps)
    return 1.0 - eps + theta / 2.0


def f_modified_chi2(theta: float, eps: float) -> float:
    _check(theta, eps)
    if eps >= 0.5:
        raise DomainError("modified chi-square transform requires epsilon < 1/2")
    root = math.sqrt(theta * theta + 4.0 * theta * (eps - eps * eps))
    return 1.0 - eps + (root - (1.0 - 2.0 * eps) * theta) / (2.0 * theta + 2.0)


def _kl_objective(x, theta, eps):
    return (math.exp(-theta) * x ** (1.0 - eps) - 1.0) / (x - 1.0)


def f_kullback_leibler(theta: float, eps: float, width: float = 1e-10) -> float:
    """inf over x in (0, 1) of (exp(-theta) x^(1-eps) - 1) / (x - 1), by golden section."""
    _check(theta, eps)
    lo, hi = 1e-12, 1.0 - 1e-12
    a = hi - _GOLDEN * (hi - lo)
    b = lo + _GOLDEN * (hi - lo)
    fa, fb = _kl_objective(a, theta, eps), _kl_objective(b, theta, eps)
    while hi - lo > width:
        if fa <= fb:
            hi, b, fb = b, a, fa
            a = hi - _GOLDEN * (hi - lo)
            fa = _kl_objective(a, theta, eps)
        else:
            lo, a, fa = a, b, fb
            b = lo + _GOLDEN * (hi - lo)
            fb = _kl_objective(b, theta, eps)
    return min(fa, fb)


def hellinger_terms(theta: float, eps: float) -> tuple:
    """The coefficient B and discriminant of the quadratic behind the Hellinger transform."""
    c = (2.0 - theta) ** 2
    B = -(2.0 - c) * eps - c / 2.0
    disc = c * (4.0 - c) * eps * (1.0 - eps)
    return B, disc


def f_hellinger(theta: float, eps: float) -> float:
    _check(theta, eps)
    if theta >= HELLINGER_MAX:
        raise DomainError("Hellinger transform requires theta < 2 - sqrt(2)")
    B, disc = hellinger_terms(theta, eps)
    x = (-B + math.sqrt(disc)) / 2.0
    # x solves the squared form of  -2 sqrt(c/4 (1 - c/4) x (1 - x)) = (1 - c/2) x + c/4 - eps,
    # c = (2 - theta)^2.  It is a genuine root only while the right side is
    # <= 0; past that radius no nominal level below one suffices.
    c = (2.0 - theta) ** 2
    if (1.0 - c / 2.0) * x + c / 4.0 - eps > 1e-12:
        return 1.0
    return x


_F = {
    "kullback_leibler": f_kullback_leibler,
    "variation": f_variation,
    "modified_chi2": f_modified_chi2,
    "hellinger": f_hellinger,
}


def risk_transform(divergence: str, theta: float, eps: float) -> float:
    return _F[ALIASES.get(divergence, divergence)](theta, eps)


@dataclass(frozen=True)
class PhiAmbiguity:
    divergence: str
    theta: float
    epsilon: float
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        d = ALIASES.get(self.divergence, self.divergence)
        if d not in DIVERGENCES:
            raise InvalidModel(f"unknown divergence {self.divergence!r}")
        object.__setattr__(self, "divergence", d)
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        # Domain checks happen here so bad parameters fail at parse time.
        risk_transform(d, self.theta, self.epsilon)

    @property
    def level(self) -> float:
        return risk_transform(self.divergence, self.theta, self.epsilon)

    def kappa(self) -> float:
        f = self.level
        if f >= 1.0:
            raise InfeasibleTransform(f"transformed level {f:.6g} >= 1: no finite reward level is guaranteed")
        return normal_quantile(f)


def build_phi_socp(poly, a: PhiAmbiguity):
    from .moments import build_kappa_socp

    return build_kappa_socp(poly, a.mu, a.sigma, a.kappa())


def solve_phi(poly, a: PhiAmbiguity, model: str | None = None):
    from .moments import solve_kappa_socp

    t0 = time.perf_counter()
    name = model or f"phi-{a.divergence}"
    try:
        kappa = a.kappa()
    except InfeasibleTransform as exc:
        from .solution import DrccmdpSolution

        return DrccmdpSolution(name, "infeasible", float("nan"), None, None,
                               time.perf_counter() - t0, {"reason": str(exc), "level": a.level})
    sol = solve_kappa_socp(poly, a.mu, a.sigma, kappa, name)
    sol.diagnostics["level"] = a.level
    return sol
