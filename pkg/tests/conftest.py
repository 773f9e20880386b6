import numpy as np
import pytest

from analogylab.mdp import TabularMdp


def one_state(reward=1.0, gamma=0.9, actions=1):
    return TabularMdp(1, ("x",), actions, np.ones((1, actions, 1)), np.full((1, actions), reward), gamma)


def linear_solve(mdp, policy):
    """Exact V^pi from (I - gamma P_pi) V = r_pi, independent of the iterative solver."""
    r = np.einsum("sa,sa->s", policy, mdp.reward)
    p = np.einsum("sa,sat->st", policy, mdp.transition)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.gamma * p, r)


def random_policy(rng, n, a):
    return rng.dirichlet(np.ones(a), size=n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
