"""Numerical checks of the value-degradation bound for corrupted state maps.

An experiment draws random source MDPs, builds analogous targets, corrupts
the exact lift ``h`` into an imagination map ``psi`` and compares the exact
value gap between ``pi_S o psi`` and ``pi_S o h`` with
``2 * L_TV * Q_max * eps / (1 - gamma)``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analogy import build_analogous_target, induced_policy, random_surjective_map, state_map
from .mdp import (
    ContractViolation,
    StateEmbedding,
    TabularMdp,
    estimate_lipschitz,
    evaluate_policy,
    q_from_v,
    q_max,
    random_mdp,
    softmax_policy,
    value_iteration,
)

log = logging.getLogger(__name__)

BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class ImaginationMap:
    psi: np.ndarray
    rate: float
    seed: tuple[int, ...]
    corrupted: tuple[int, ...]


def make_corrupted_psi(
    h: np.ndarray, num_semantic: int, rate: float, rng_seed: int | Sequence[int]
) -> ImaginationMap:
    """Corrupt the semantic part of each image of ``h`` with probability ``rate``.

    ``num_semantic`` is the size of the source vocabulary, which fixes how flat
    source indices split into ``(u, w)``.  A corrupted image keeps ``u`` and
    gets a uniformly drawn different semantic.  One uniform draw is consumed
    per state regardless of ``rate``, so maps for the same seed are nested as
    the rate grows.
    """
    if not 0.0 <= rate <= 1.0:
        raise ContractViolation(f"corruption rate {rate} outside [0, 1]")
    h = np.asarray(h, dtype=np.int64)
    seed = (rng_seed,) if isinstance(rng_seed, (int, np.integer)) else tuple(rng_seed)
    rng = np.random.default_rng([int(x) for x in seed])
    flips = rng.random(h.shape[0])
    shifts = rng.integers(1, max(num_semantic, 2), size=h.shape[0])
    psi = h.copy()
    corrupted = []
    if num_semantic >= 2:
        for i in np.nonzero(flips < rate)[0]:
            u, w = divmod(int(h[i]), num_semantic)
            psi[i] = u * num_semantic + (w + int(shifts[i])) % num_semantic
            corrupted.append(int(i))
    psi.flags.writeable = False
    return ImaginationMap(psi, float(rate), seed, tuple(corrupted))


def measure_epsilon(psi: ImaginationMap | np.ndarray, h: np.ndarray, embedding: StateEmbedding) -> float:
    """Largest embedding distance between ``psi(s)`` and ``h(s)`` over target states."""
    images = psi.psi if isinstance(psi, ImaginationMap) else np.asarray(psi)
    h = np.asarray(h)
    if images.shape != h.shape:
        raise ContractViolation("psi and h are defined on different target state sets")
    if images.size == 0:
        return 0.0
    x = embedding.matrix()
    return float(np.max(np.linalg.norm(x[images] - x[h], axis=1)))


def degradation_bound(l_tv: float, q_max: float, gamma: float, epsilon: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ContractViolation(f"gamma={gamma} must lie in (0,1)")
    if min(l_tv, q_max, epsilon) < 0:
        raise ContractViolation("L_TV, Q_max and epsilon must be non-negative")
    return 2.0 * l_tv * q_max * epsilon / (1.0 - gamma)


def empirical_gap(target: TabularMdp, pi_psi: np.ndarray, pi_h: np.ndarray, tol: float = 1e-10) -> float:
    v_psi = evaluate_policy(target, pi_psi, tol)
    v_h = evaluate_policy(target, pi_h, tol)
    return float(np.max(np.abs(v_psi - v_h)))


@dataclass(frozen=True)
class BoundReport:
    instance_id: int
    rate: float
    seed: int
    epsilon: float
    l_tv: float
    q_max: float
    gamma: float
    bound: float
    gap: float

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound + BOUND_SLACK

    def row(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        return d


@dataclass
class BoundConfig:
    master_seed: int = 0
    instances: int = 20
    structural: tuple[int, int] = (2, 20)
    source_semantics: tuple[int, int] = (2, 4)
    max_target_semantics: int = 5
    actions: tuple[int, int] = (2, 4)
    gamma: tuple[float, float] = (0.5, 0.95)
    temperature: float = 0.5
    rates: tuple[float, ...] = (0.0, 0.1, 0.3, 1.0)
    seeds: tuple[int, ...] = (0, 1, 2)
    eval_tol: float = 1e-10
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "BoundConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__ and k != "extra"}
        for key in ("structural", "source_semantics", "actions", "gamma", "rates", "seeds"):
            if key in known:
                known[key] = tuple(known[key])
        unknown = {k: v for k, v in data.items() if k not in cls.__dataclass_fields__}
        return cls(**known, extra=unknown)

    @classmethod
    def load(cls, path: str | Path) -> "BoundConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class BoundInstance:
    """One random (source, target, map) triple with everything the bound needs."""

    instance_id: int
    source: TabularMdp
    target: TabularMdp
    h: np.ndarray
    source_policy: np.ndarray
    l_tv: float
    q_max: float


def make_instance(config: BoundConfig, instance_id: int) -> BoundInstance:
    rng = np.random.default_rng([config.master_seed, instance_id])
    n_u = int(rng.integers(config.structural[0], config.structural[1] + 1))
    n_s = int(rng.integers(config.source_semantics[0], config.source_semantics[1] + 1))
    n_t = int(rng.integers(n_s, max(n_s, config.max_target_semantics) + 1))
    n_a = int(rng.integers(config.actions[0], config.actions[1] + 1))
    gamma = float(rng.uniform(*config.gamma))
    source = random_mdp(rng, n_u, [f"s{i}" for i in range(n_s)], n_a, gamma, branching=min(4, n_u * n_s))
    phi = random_surjective_map(rng, [f"t{i}" for i in range(n_t)], source.semantic_vocab)
    target = build_analogous_target(source, phi)
    v_star, _ = value_iteration(source, config.eval_tol)
    pi_s = softmax_policy(q_from_v(source, v_star), config.temperature)
    h = state_map(phi, n_u)
    pi_h = induced_policy(pi_s, h)
    q_h = q_from_v(target, evaluate_policy(target, pi_h, config.eval_tol))
    return BoundInstance(
        instance_id=instance_id,
        source=source,
        target=target,
        h=h,
        source_policy=pi_s,
        l_tv=estimate_lipschitz(pi_s, StateEmbedding.for_mdp(source)),
        q_max=q_max(q_h),
    )


def run_trial(inst: BoundInstance, rate: float, seed: int, master_seed: int, tol: float) -> BoundReport:
    psi = make_corrupted_psi(inst.h, inst.source.num_semantic, rate, (master_seed, inst.instance_id, seed))
    eps = measure_epsilon(psi, inst.h, StateEmbedding.for_mdp(inst.source))
    pi_h = induced_policy(inst.source_policy, inst.h)
    pi_psi = induced_policy(inst.source_policy, psi.psi)
    gap = empirical_gap(inst.target, pi_psi, pi_h, tol)
    return BoundReport(
        instance_id=inst.instance_id,
        rate=float(rate),
        seed=int(seed),
        epsilon=eps,
        l_tv=inst.l_tv,
        q_max=inst.q_max,
        gamma=inst.source.gamma,
        bound=degradation_bound(inst.l_tv, inst.q_max, inst.source.gamma, eps),
        gap=gap,
    )


def run_bound_experiment(config: BoundConfig) -> list[BoundReport]:
    reports = []
    for i in range(config.instances):
        try:
            inst = make_instance(config, i)
            for rate in config.rates:
                for seed in config.seeds:
                    reports.append(run_trial(inst, rate, seed, config.master_seed, config.eval_tol))
        except Exception as exc:
            raise RuntimeError(f"bound experiment failed on instance {i}: {exc}") from exc
    failures = sum(not r.holds for r in reports)
    log.info("bound experiment: %d trials, %d violations", len(reports), failures)
    return reports


REPORT_COLUMNS = ("instance_id", "rate", "seed", "epsilon", "l_tv", "q_max", "gamma", "bound", "gap", "holds")


def reports_to_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        row = r.row()
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in REPORT_COLUMNS])
    return buf.getvalue()


def write_bound_reports(reports: Sequence[BoundReport], out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "bound_report.csv"
    json_path = out / "bound_report.json"
    csv_path.write_text(reports_to_csv(reports))
    payload = {
        "trials": len(reports),
        "violations": sum(not r.holds for r in reports),
        "reports": [r.row() for r in reports],
    }
    json_path.write_text(json.dumps(payload, indent=2))
    return csv_path, json_path
