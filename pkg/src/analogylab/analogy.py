"""Semantic relabelings between factored MDPs and their verification.

A :class:`SemanticMap` sends every target semantic label to a source label.
Lifting it to states, ``h(u, v) = (u, phi(v))``, gives the candidate
homomorphism whose reward and transition identities are checked by
:func:`check_affordance_preserving`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .mdp import ContractViolation, FactoredState, TabularMdp


class MappingDomainError(ContractViolation):
    """A label or state lies outside the semantic map's domain or codomain."""


@dataclass(frozen=True)
class SemanticMap:
    target_vocab: tuple[str, ...]
    source_vocab: tuple[str, ...]
    table: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "target_vocab", tuple(self.target_vocab))
        object.__setattr__(self, "source_vocab", tuple(self.source_vocab))
        object.__setattr__(self, "table", tuple(int(i) for i in self.table))
        if len(self.table) != len(self.target_vocab):
            raise MappingDomainError("semantic map must be total on the target vocabulary")
        for v, w in enumerate(self.table):
            if not 0 <= w < len(self.source_vocab):
                raise MappingDomainError(
                    f"image of {self.target_vocab[v]!r} lies outside the source vocabulary"
                )

    @classmethod
    def from_labels(
        cls, mapping: Mapping[str, str], target_vocab: Sequence[str], source_vocab: Sequence[str]
    ) -> "SemanticMap":
        missing = [t for t in target_vocab if t not in mapping]
        if missing:
            raise MappingDomainError(f"semantic map is partial; unmapped target labels: {missing}")
        source_vocab = tuple(source_vocab)
        table = []
        for t in target_vocab:
            if mapping[t] not in source_vocab:
                raise MappingDomainError(f"{t!r} maps to {mapping[t]!r}, not a source label")
            table.append(source_vocab.index(mapping[t]))
        return cls(tuple(target_vocab), source_vocab, tuple(table))

    @classmethod
    def identity(cls, vocab: Sequence[str]) -> "SemanticMap":
        return cls(tuple(vocab), tuple(vocab), tuple(range(len(vocab))))

    def __call__(self, v: int) -> int:
        if not 0 <= v < len(self.table):
            raise MappingDomainError(f"semantic index {v} outside the map's domain")
        return self.table[v]

    def label_map(self) -> dict[str, str]:
        return {t: self.source_vocab[w] for t, w in zip(self.target_vocab, self.table)}

    @property
    def is_injective(self) -> bool:
        return len(set(self.table)) == len(self.table)

    def to_json(self) -> str:
        return json.dumps(
            {
                "target_vocab": list(self.target_vocab),
                "source_vocab": list(self.source_vocab),
                "mapping": self.label_map(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SemanticMap":
        data = json.loads(text)
        return cls.from_labels(data["mapping"], data["target_vocab"], data["source_vocab"])


def lift_h(phi: SemanticMap, state: FactoredState | tuple[int, int]) -> FactoredState:
    u, v = state
    return FactoredState(int(u), phi(int(v)))


def state_map(phi: SemanticMap, num_structural: int) -> np.ndarray:
    """The lift ``h`` as an array from target flat index to source flat index."""
    nt, ns = len(phi.target_vocab), len(phi.source_vocab)
    u, v = np.divmod(np.arange(num_structural * nt), nt)
    return u * ns + np.asarray(phi.table, dtype=np.int64)[v]


def _check_pair(source: TabularMdp, target: TabularMdp, phi: SemanticMap) -> None:
    if source.num_actions != target.num_actions:
        raise ContractViolation(
            f"action spaces differ: source has {source.num_actions}, target {target.num_actions}"
        )
    if source.num_structural != target.num_structural:
        raise ContractViolation("source and target disagree on the structural component")
    if phi.target_vocab != target.semantic_vocab:
        raise MappingDomainError("semantic map domain does not match the target vocabulary")
    if phi.source_vocab != source.semantic_vocab:
        raise MappingDomainError("semantic map codomain does not match the source vocabulary")


@dataclass
class AnalogyCertificate:
    """Outcome of an exhaustive affordance-preservation check.

    Reward violations are ``(s, a, R_T, R_S(h(s), a))``.  Transition
    violations are ``(s, a, x, T_T, T_S(x | h(s), a))`` where ``x`` is the
    compared successor (a target state in pointwise mode, a source state in
    lumped mode).
    """

    reward_violations: list[tuple] = field(default_factory=list)
    transition_violations: list[tuple] = field(default_factory=list)
    max_abs_deviation: float = 0.0
    tol: float = 1e-9
    mode: str = "lumped"

    @property
    def valid(self) -> bool:
        return (
            not self.reward_violations
            and not self.transition_violations
            and self.max_abs_deviation <= self.tol
        )

    def to_dict(self) -> dict:
        def row(item):
            s, a, x, lhs, rhs = item
            return {"s": list(s), "a": int(a), "next": list(x), "target": lhs, "source": rhs}

        return {
            "valid": self.valid,
            "mode": self.mode,
            "tol": self.tol,
            "max_abs_deviation": self.max_abs_deviation,
            "reward_violations": [
                {"s": list(s), "a": int(a), "target": rt, "source": rs}
                for s, a, rt, rs in self.reward_violations
            ],
            "transition_violations": [row(t) for t in self.transition_violations],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary(self) -> str:
        status = "valid" if self.valid else "INVALID"
        return (
            f"{status}: {len(self.reward_violations)} reward and "
            f"{len(self.transition_violations)} transition violations, "
            f"max deviation {self.max_abs_deviation:.3g} (tol {self.tol:g}, {self.mode})"
        )


def check_affordance_preserving(
    source: TabularMdp,
    target: TabularMdp,
    phi: SemanticMap,
    tol: float = 1e-9,
    pointwise: bool = False,
) -> AnalogyCertificate:
    """Check ``R_T(s,a) = R_S(h(s),a)`` and the transition identity for every tuple.

    The default lumped mode compares ``sum_{s' : h(s') = x} T_T(s'|s,a)`` with
    ``T_S(x|h(s),a)`` for every source successor ``x``.  For injective maps
    this is equivalent to the entrywise identity on row-stochastic MDPs; for
    non-injective maps it is the form that keeps both MDPs stochastic.
    ``pointwise=True`` compares ``T_T(s'|s,a)`` with ``T_S(h(s')|h(s),a)``
    entry by entry instead.
    """
    _check_pair(source, target, phi)
    h = state_map(phi, target.num_structural)
    cert = AnalogyCertificate(tol=tol, mode="pointwise" if pointwise else "lumped")

    r_dev = np.abs(target.reward - source.reward[h])
    for s, a in zip(*np.nonzero(r_dev > tol)):
        cert.reward_violations.append(
            (target.state(s), int(a), float(target.reward[s, a]), float(source.reward[h[s], a]))
        )

    if pointwise:
        lhs = target.transition
        rhs = source.transition[h][:, :, h]
        succ_state = target.state
    else:
        lumped = np.zeros((target.num_states, target.num_actions, source.num_states))
        np.add.at(lumped, (slice(None), slice(None), h), target.transition)
        lhs = lumped
        rhs = source.transition[h]
        succ_state = source.state
    t_dev = np.abs(lhs - rhs)
    for s, a, x in zip(*np.nonzero(t_dev > tol)):
        cert.transition_violations.append(
            (target.state(s), int(a), succ_state(x), float(lhs[s, a, x]), float(rhs[s, a, x]))
        )
    cert.max_abs_deviation = float(max(r_dev.max(initial=0.0), t_dev.max(initial=0.0)))
    return cert


def build_analogous_target(
    source: TabularMdp, phi: SemanticMap, target_vocab: Sequence[str] | None = None
) -> TabularMdp:
    """Construct a target MDP that is analogous to ``source`` under ``phi`` by construction.

    Rewards are copied through ``h``.  Transition mass that the source sends to
    ``(u', w)`` goes to a single preimage ``(u', v')`` of it: the current
    semantic ``v`` when ``phi(v) == w``, else the lowest-index preimage.  The
    source must not send mass to semantics outside the image of ``phi``.
    """
    if target_vocab is not None and tuple(target_vocab) != phi.target_vocab:
        raise MappingDomainError("target vocabulary does not match the semantic map's domain")
    if phi.source_vocab != source.semantic_vocab:
        raise MappingDomainError("semantic map codomain does not match the source vocabulary")
    nt, ns = len(phi.target_vocab), len(phi.source_vocab)
    n_u = source.num_structural
    h = state_map(phi, n_u)

    first_preimage = np.full(ns, -1, dtype=np.int64)
    for v in range(nt - 1, -1, -1):
        first_preimage[phi.table[v]] = v

    S_T, A = n_u * nt, source.num_actions
    transition = np.zeros((S_T, A, S_T))
    src_u, src_w = np.divmod(np.arange(source.num_states), ns)
    for s in range(S_T):
        v = s % nt
        choice = first_preimage.copy()
        choice[phi.table[v]] = v
        row = source.transition[h[s]]
        reachable = row.sum(axis=0) > 0
        if np.any(choice[src_w[reachable]] < 0):
            raise MappingDomainError(
                "source transitions reach semantics outside the image of the map; "
                "no analogous target exists for this map"
            )
        cols = src_u[reachable] * nt + choice[src_w[reachable]]
        transition[s][:, cols] = row[:, reachable]
    reward = source.reward[h].copy()
    return TabularMdp(n_u, phi.target_vocab, A, transition, reward, source.gamma)


def induced_policy(source_policy: np.ndarray, state_map: np.ndarray) -> np.ndarray:
    """Target policy that acts as the source policy does at the mapped state."""
    source_policy = np.asarray(source_policy, dtype=np.float64)
    state_map = np.asarray(state_map, dtype=np.int64)
    if state_map.ndim != 1:
        raise ContractViolation("state map must be a one-dimensional index array")
    if np.any(state_map < 0) or np.any(state_map >= source_policy.shape[0]):
        raise MappingDomainError("state map image lies outside the source state set")
    return source_policy[state_map].copy()


def random_surjective_map(
    rng: np.random.Generator, target_vocab: Sequence[str], source_vocab: Sequence[str]
) -> SemanticMap:
    """Uniformly shuffled total map that hits every source label."""
    nt, ns = len(target_vocab), len(source_vocab)
    if nt < ns:
        raise ContractViolation("a surjective map needs at least as many target labels as source labels")
    table = np.concatenate([np.arange(ns), rng.integers(0, ns, size=nt - ns)])
    rng.shuffle(table)
    return SemanticMap(tuple(target_vocab), tuple(source_vocab), tuple(int(w) for w in table))
