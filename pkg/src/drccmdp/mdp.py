"""Finite discounted MDPs, their occupation-measure polytope and stationary policies.

The state-action set K is flattened state-major, action-minor: every module
indexes reward vectors, occupation measures and covariance matrices in this
order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .config import TOL
from .errors import InvalidModel, SolverFailure


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MdpModel:
    """A finite MDP with known transitions.

    ``transition`` is a dense ``(|K|, n_states)`` array whose row for the pair
    (s, a) is the distribution of the next state.
    """

    n_states: int
    actions: tuple
    transition: np.ndarray
    alpha: float
    gamma: np.ndarray

    def __post_init__(self):
        acts = tuple(tuple(str(a) for a in row) for row in self.actions)
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "transition", _readonly(self.transition))
        object.__setattr__(self, "gamma", _readonly(self.gamma))
        self._validate()

    def _validate(self):
        n = self.n_states
        if n < 1 or len(self.actions) != n:
            raise InvalidModel("actions must list one entry per state")
        if any(len(a) == 0 for a in self.actions):
            raise InvalidModel("every state needs at least one action")
        P = self.transition
        if P.shape != (self.n_pairs, n):
            raise InvalidModel(f"transition has shape {P.shape}, expected {(self.n_pairs, n)}")
        if np.any(P < -TOL.normalization) or np.any(P > 1 + TOL.normalization):
            raise InvalidModel("transition probabilities must lie in [0, 1]")
        bad = np.abs(P.sum(axis=1) - 1.0) > TOL.normalization
        if bad.any():
            k = int(np.argmax(bad))
            raise InvalidModel(f"transition row {self.index[k]} does not sum to 1")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidModel("discount must lie in (0, 1)")
        g = self.gamma
        if g.shape != (n,) or np.any(g < -TOL.normalization) or abs(g.sum() - 1.0) > TOL.normalization:
            raise InvalidModel("initial distribution must be a probability vector over states")

    @property
    def n_pairs(self) -> int:
        return sum(len(a) for a in self.actions)

    @property
    def index(self) -> list:
        """Flattened K as a list of (state, action label) pairs."""
        return [(s, a) for s, acts in enumerate(self.actions) for a in acts]

    @property
    def state_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_states), [len(a) for a in self.actions])

    def labels(self) -> list:
        return [f"{s}:{a}" for s, a in self.index]

    # JSON ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "MdpModel":
        try:
            n = int(d["n_states"])
            actions = d["actions"]
            offsets = np.cumsum([0] + [len(a) for a in actions])
            P = np.zeros((int(offsets[-1]), n))
            for s, a, s2, p in d["transition"]:
                s, s2 = int(s), int(s2)
                a = actions[s].index(a) if isinstance(a, str) else int(a)
                P[offsets[s] + a, s2] += float(p)
            return cls(n, actions, P, float(d["alpha"]), d["gamma"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise InvalidModel(f"malformed MDP description: {exc}") from exc

    def to_dict(self) -> dict:
        rows = []
        for k, (s, _) in enumerate(self.index):
            a = k - int(np.searchsorted(self.state_of, s))
            for s2 in np.flatnonzero(self.transition[k]):
                rows.append([s, a, int(s2), float(self.transition[k, s2])])
        return {
            "n_states": self.n_states,
            "actions": [list(a) for a in self.actions],
            "transition": rows,
            "alpha": self.alpha,
            "gamma": self.gamma.tolist(),
        }


def load_mdp(path) -> MdpModel:
    with open(path) as fh:
        return MdpModel.from_dict(json.load(fh))


@dataclass(frozen=True)
class OccupationPolytope:
    """Equality description ``eq_matrix @ rho = eq_rhs``, ``rho >= 0``."""

    index: list
    state_of: np.ndarray
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.index)

    @property
    def n_states(self) -> int:
        return self.eq_matrix.shape[0]

    def residual(self, rho) -> float:
        return float(np.max(np.abs(self.eq_matrix @ rho - self.eq_rhs)))


def build_occupation_polytope(mdp: MdpModel) -> OccupationPolytope:
    n, m = mdp.n_states, mdp.n_pairs
    delta = sp.csr_matrix((np.ones(m), (mdp.state_of, np.arange(m))), shape=(n, m))
    A = (delta - mdp.alpha * sp.csr_matrix(mdp.transition.T)).tocsr()
    A.eliminate_zeros()
    b = (1.0 - mdp.alpha) * np.asarray(mdp.gamma)
    return OccupationPolytope(mdp.index, mdp.state_of, A, _readonly(b))


@dataclass(frozen=True)
class StationaryPolicy:
    index: list
    state_of: np.ndarray
    probs: np.ndarray

    def table(self) -> list:
        """Per-state list of action probabilities."""
        return [self.probs[self.state_of == s].tolist() for s in range(int(self.state_of.max()) + 1)]

    def __getitem__(self, key):
        return self.probs[self.index.index(key)]


def extract_policy(rho, structure) -> StationaryPolicy:
    """Normalize an occupation measure state by state.

    ``structure`` is an :class:`MdpModel` or :class:`OccupationPolytope`.
    States with (numerically) zero visitation get the uniform distribution.
    """
    state_of = np.asarray(structure.state_of)
    r = np.clip(np.asarray(rho, dtype=float), 0.0, None)
    n = int(state_of.max()) + 1
    den = np.bincount(state_of, weights=r, minlength=n)
    cnt = np.bincount(state_of, minlength=n)
    empty = den < TOL.zero_denominator
    f = np.where(empty[state_of], 1.0 / cnt[state_of], r / np.where(empty, 1.0, den)[state_of])
    return StationaryPolicy(structure.index, state_of, _readonly(f))


def induced_occupation(mdp: MdpModel, policy: StationaryPolicy) -> np.ndarray:
    """Discounted state-action frequencies generated by a stationary policy."""
    f = np.asarray(policy.probs)
    Pf = sp.csr_matrix((f, (mdp.state_of, np.arange(mdp.n_pairs))), shape=(mdp.n_states, mdp.n_pairs)) @ mdp.transition
    x = np.linalg.solve(np.eye(mdp.n_states) - mdp.alpha * Pf.T, (1.0 - mdp.alpha) * mdp.gamma)
    return x[mdp.state_of] * f


def solve_nominal_lp(mdp: MdpModel, R) -> tuple:
    """Maximize ``rho @ R`` over the occupation polytope; returns (value, rho)."""
    R = np.asarray(R, dtype=float)
    if R.shape != (mdp.n_pairs,):
        raise InvalidModel(f"reward vector must have length {mdp.n_pairs}")
    poly = build_occupation_polytope(mdp)
    res = linprog(-R, A_eq=poly.eq_matrix, b_eq=poly.eq_rhs, bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverFailure(f"nominal LP failed: {res.message}")
    rho = np.clip(res.x, 0.0, None)
    return float(R @ rho), rho
