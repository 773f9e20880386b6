"""Finite factored MDPs and exact dynamic programming over them.

States are pairs ``(u, v)`` of a structural index and a semantic index.  The
flat index used by every array in this module is ``u * num_semantic + v``.
Policies, value functions and Q tables are plain numpy arrays with shapes
``(S, A)``, ``(S,)`` and ``(S, A)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np


class ContractViolation(ValueError):
    """Inputs do not satisfy an operation's preconditions."""


class ConvergenceError(RuntimeError):
    """Fixed-point iteration exceeded its iteration cap."""


class FactoredState(NamedTuple):
    u: int
    v: int


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP over the product of structural and semantic components.

    Construction only checks array shapes. Use :func:`validate_mdp` to check
    stochasticity and the discount range.
    """

    num_structural: int
    semantic_vocab: tuple[str, ...]
    num_actions: int
    transition: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        vocab = tuple(str(label) for label in self.semantic_vocab)
        if len(set(vocab)) != len(vocab):
            raise ContractViolation("semantic vocabulary contains duplicate labels")
        if self.num_structural < 1 or not vocab or self.num_actions < 1:
            raise ContractViolation("MDP needs at least one structural index, label and action")
        n = self.num_structural * len(vocab)
        transition = np.array(self.transition, dtype=np.float64)
        reward = np.array(self.reward, dtype=np.float64)
        if transition.shape != (n, self.num_actions, n):
            raise ContractViolation(
                f"transition has shape {transition.shape}, expected {(n, self.num_actions, n)}"
            )
        if reward.shape != (n, self.num_actions):
            raise ContractViolation(f"reward has shape {reward.shape}, expected {(n, self.num_actions)}")
        transition.flags.writeable = False
        reward.flags.writeable = False
        object.__setattr__(self, "semantic_vocab", vocab)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def num_semantic(self) -> int:
        return len(self.semantic_vocab)

    @property
    def num_states(self) -> int:
        return self.num_structural * self.num_semantic

    def index(self, state: FactoredState | tuple[int, int]) -> int:
        u, v = state
        if not (0 <= u < self.num_structural and 0 <= v < self.num_semantic):
            raise ContractViolation(f"state {tuple(state)} outside {self.num_structural}x{self.num_semantic}")
        return int(u) * self.num_semantic + int(v)

    def state(self, index: int) -> FactoredState:
        if not 0 <= index < self.num_states:
            raise ContractViolation(f"state index {index} out of range")
        u, v = divmod(int(index), self.num_semantic)
        return FactoredState(u, v)

    def states(self) -> Iterator[FactoredState]:
        for i in range(self.num_states):
            yield self.state(i)

    def label(self, state: FactoredState | int) -> str:
        if isinstance(state, (int, np.integer)):
            state = self.state(int(state))
        return self.semantic_vocab[state.v]

    def semantic_index(self, label: str) -> int:
        try:
            return self.semantic_vocab.index(label)
        except ValueError:
            raise ContractViolation(f"unknown semantic label {label!r}") from None

    def replace(self, **changes) -> "TabularMdp":
        fields = dict(
            num_structural=self.num_structural,
            semantic_vocab=self.semantic_vocab,
            num_actions=self.num_actions,
            transition=self.transition,
            reward=self.reward,
            gamma=self.gamma,
        )
        fields.update(changes)
        return TabularMdp(**fields)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "num_structural": self.num_structural,
            "semantic_vocab": list(self.semantic_vocab),
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMdp":
        return cls(
            num_structural=int(data["num_structural"]),
            semantic_vocab=tuple(data["semantic_vocab"]),
            num_actions=int(data["num_actions"]),
            transition=np.asarray(data["transition"], dtype=np.float64),
            reward=np.asarray(data["reward"], dtype=np.float64),
            gamma=float(data["gamma"]),
        )

    def to_json(self) -> str:
        # json writes floats with repr(), which round-trips float64 exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


def validate_mdp(mdp: TabularMdp, atol: float = 1e-12) -> list[str]:
    """Return a list of human-readable violations; empty iff the MDP is valid."""
    problems = []
    if not 0.0 < mdp.gamma < 1.0:
        problems.append(f"discount not in (0,1): gamma={mdp.gamma}")
    T = mdp.transition
    if not np.all(np.isfinite(T)):
        problems.append("transition contains non-finite entries")
    if not np.all(np.isfinite(mdp.reward)):
        problems.append("reward contains non-finite entries")
    for s, a in zip(*np.nonzero((T < 0).any(axis=2))):
        problems.append(f"negative transition probability at (s={mdp.state(s)}, a={a})")
    sums = T.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > atol)):
        problems.append(f"transition row (s={mdp.state(s)}, a={a}) sums to {sums[s, a]!r}, not 1")
    return problems


def _check_policy(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.num_states, mdp.num_actions):
        raise ContractViolation(f"policy shape {policy.shape} != {(mdp.num_states, mdp.num_actions)}")
    return policy


def _check_value(mdp: TabularMdp, value: np.ndarray) -> np.ndarray:
    value = np.asarray(value, dtype=np.float64)
    if value.shape != (mdp.num_states,):
        raise ContractViolation(f"value shape {value.shape} != {(mdp.num_states,)}")
    return value


def _expected_next(mdp: TabularMdp, value: np.ndarray) -> np.ndarray:
    S, A = mdp.num_states, mdp.num_actions
    return (mdp.transition.reshape(S * A, S) @ value).reshape(S, A)


def q_from_v(mdp: TabularMdp, value: np.ndarray) -> np.ndarray:
    """One-step lookahead ``Q(s,a) = R(s,a) + gamma * sum_s' T(s'|s,a) V(s')``."""
    value = _check_value(mdp, value)
    return mdp.reward + mdp.gamma * _expected_next(mdp, value)


def q_max(q: np.ndarray) -> float:
    """Largest action-value magnitude, the constant bounding ``|Q|``."""
    return float(np.max(np.abs(q)))


def bellman_backup(mdp: TabularMdp, policy: np.ndarray, value: np.ndarray) -> np.ndarray:
    """Apply the policy's Bellman operator once. Inputs are not modified."""
    policy = _check_policy(mdp, policy)
    q = q_from_v(mdp, value)
    return np.einsum("sa,sa->s", policy, q)


def _iteration_cap(mdp: TabularMdp, v0: np.ndarray, threshold: float, margin: int = 50) -> int:
    # ||V_{k+1} - V_k|| <= gamma^k ||V_1 - V_0|| and ||V_1 - V_0|| <= R_max + (1 + gamma)||V_0||
    initial = float(np.max(np.abs(mdp.reward), initial=0.0)) + (1.0 + mdp.gamma) * float(
        np.max(np.abs(v0), initial=0.0)
    )
    if initial <= threshold:
        return margin
    return int(math.ceil(math.log(threshold / initial) / math.log(mdp.gamma))) + margin


def _fixed_point(mdp: TabularMdp, step, tol: float, v0: np.ndarray | None, max_iterations: int | None):
    if tol <= 0:
        raise ContractViolation("tol must be positive")
    if not 0.0 < mdp.gamma < 1.0:
        raise ContractViolation(f"gamma={mdp.gamma} must lie in (0,1)")
    value = np.zeros(mdp.num_states) if v0 is None else _check_value(mdp, v0).copy()
    # stopping on ||V_k - V_{k-1}|| < tol (1-gamma)/gamma gives ||V_k - V*|| <= tol
    threshold = tol * (1.0 - mdp.gamma) / mdp.gamma
    cap = max_iterations if max_iterations is not None else _iteration_cap(mdp, value, threshold)
    for _ in range(cap):
        new = step(value)
        if not np.all(np.isfinite(new)):
            break
        delta = float(np.max(np.abs(new - value)))
        value = new
        if delta < threshold:
            return value
    raise ConvergenceError(f"no convergence within the iteration cap of {cap} iterations")


def evaluate_policy(
    mdp: TabularMdp,
    policy: np.ndarray,
    tol: float = 1e-10,
    v0: np.ndarray | None = None,
    max_iterations: int | None = None,
) -> np.ndarray:
    """Value of ``policy`` by iterating its Bellman operator to the fixed point.

    The result is within ``tol`` of the exact value in sup norm.
    """
    policy = _check_policy(mdp, policy)
    S, A = mdp.num_states, mdp.num_actions
    flat_t = mdp.transition.reshape(S * A, S)
    # reduce to the policy's own Markov chain once
    r_pi = np.einsum("sa,sa->s", policy, mdp.reward)
    p_pi = np.einsum("sa,sat->st", policy, flat_t.reshape(S, A, S))
    gamma = mdp.gamma
    return _fixed_point(mdp, lambda v: r_pi + gamma * (p_pi @ v), tol, v0, max_iterations)


def greedy_policy(q: np.ndarray, tie_tol: float = 1e-9) -> np.ndarray:
    """Deterministic one-hot policy; near-ties go to the lowest action index."""
    q = np.asarray(q, dtype=np.float64)
    best = q.max(axis=1, keepdims=True)
    actions = np.argmax(q >= best - tie_tol, axis=1)
    policy = np.zeros_like(q)
    policy[np.arange(q.shape[0]), actions] = 1.0
    return policy


def value_iteration(
    mdp: TabularMdp, tol: float = 1e-10, max_iterations: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values and a greedy deterministic policy (lowest-index tie-break)."""
    value = _fixed_point(mdp, lambda v: q_from_v(mdp, v).max(axis=1), tol, None, max_iterations)
    return value, greedy_policy(q_from_v(mdp, value))


def softmax_policy(q: np.ndarray, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise ContractViolation("temperature must be positive")
    z = np.asarray(q, dtype=np.float64) / temperature
    z = z - z.max(axis=1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=1, keepdims=True)


def tv_distance(p: Sequence[float], q: Sequence[float]) -> float:
    """Total variation distance between two distributions on the same finite set."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ContractViolation(f"distributions have mismatched shapes {p.shape} and {q.shape}")
    return float(min(1.0, 0.5 * np.abs(p - q).sum()))


class StateEmbedding:
    """Concatenated one-hot embedding of ``(u, v)`` with Euclidean distance.

    States differing in exactly one component are ``sqrt(2)`` apart, and in
    both components ``2`` apart.
    """

    def __init__(self, num_structural: int, num_semantic: int):
        self.num_structural = num_structural
        self.num_semantic = num_semantic

    @classmethod
    def for_mdp(cls, mdp: TabularMdp) -> "StateEmbedding":
        return cls(mdp.num_structural, mdp.num_semantic)

    @property
    def num_states(self) -> int:
        return self.num_structural * self.num_semantic

    def embed(self, state: FactoredState | tuple[int, int]) -> np.ndarray:
        u, v = state
        x = np.zeros(self.num_structural + self.num_semantic)
        x[u] = 1.0
        x[self.num_structural + v] = 1.0
        return x

    def matrix(self) -> np.ndarray:
        """Embeddings of every state, rows in flat-index order."""
        idx = np.arange(self.num_states)
        u, v = np.divmod(idx, self.num_semantic)
        x = np.zeros((self.num_states, self.num_structural + self.num_semantic))
        x[idx, u] = 1.0
        x[idx, self.num_structural + v] = 1.0
        return x

    def distance(self, s1, s2) -> float:
        return float(np.linalg.norm(self.embed(s1) - self.embed(s2)))

    def pairwise(self, rows: np.ndarray | None = None, cols: np.ndarray | None = None) -> np.ndarray:
        """Distance matrix between flat state indices ``rows`` and ``cols``."""
        x = self.matrix()
        a = x if rows is None else x[rows]
        b = x if cols is None else x[cols]
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        return np.sqrt(np.maximum(sq, 0.0))


def pairwise_tv(policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    return 0.5 * np.abs(policy[:, None, :] - policy[None, :, :]).sum(axis=2)


def estimate_lipschitz(policy: np.ndarray, embedding: StateEmbedding) -> float:
    """Smallest L with ``TV(pi(.|s1), pi(.|s2)) <= L * ||embed(s1) - embed(s2)||`` for all pairs."""
    policy = np.asarray(policy, dtype=np.float64)
    if policy.ndim != 2 or policy.shape[0] != embedding.num_states:
        raise ContractViolation("policy rows must match the embedding's state count")
    if policy.shape[0] < 2:
        raise ContractViolation("need at least two states to estimate a Lipschitz constant")
    tv = pairwise_tv(policy)
    dist = embedding.pairwise()
    off = ~np.eye(policy.shape[0], dtype=bool)
    return float(np.max(tv[off] / dist[off]))


def random_mdp(
    rng: np.random.Generator,
    num_structural: int,
    semantic_vocab: Sequence[str] | int,
    num_actions: int,
    gamma: float,
    branching: int | None = None,
    reward_scale: float = 1.0,
) -> TabularMdp:
    """Random MDP with Dirichlet transition rows over ``branching`` successors."""
    if isinstance(semantic_vocab, int):
        semantic_vocab = [f"v{i}" for i in range(semantic_vocab)]
    n = num_structural * len(semantic_vocab)
    b = n if branching is None else min(branching, n)
    transition = np.zeros((n, num_actions, n))
    for s in range(n):
        for a in range(num_actions):
            succ = rng.choice(n, size=b, replace=False)
            transition[s, a, succ] = rng.dirichlet(np.ones(b))
    reward = rng.uniform(-reward_scale, reward_scale, size=(n, num_actions))
    return TabularMdp(num_structural, tuple(semantic_vocab), num_actions, transition, reward, gamma)
