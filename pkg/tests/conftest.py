import numpy as np
import pytest

from drccmdp.mdp import MdpModel, build_occupation_polytope


def random_mdp(n_states, n_actions, seed, alpha=0.85):
    rng = np.random.default_rng(seed)
    P = rng.random((n_states * n_actions, n_states))
    P /= P.sum(axis=1, keepdims=True)
    acts = [[f"a{j}" for j in range(n_actions)]] * n_states
    return MdpModel(n_states, acts, P, alpha, np.full(n_states, 1.0 / n_states))


def single_pair_poly(alpha=0.85):
    """One state, one action: the occupation polytope is the point rho = 1."""
    return build_occupation_polytope(MdpModel(1, [["only"]], np.ones((1, 1)), alpha, [1.0]))


def two_pair_poly(alpha=0.85):
    """One state with two self-looping actions: rho ranges over the simplex."""
    return build_occupation_polytope(MdpModel(1, [["a", "b"]], np.ones((2, 1)), alpha, [1.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
