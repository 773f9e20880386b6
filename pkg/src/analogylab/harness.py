"""Zero-shot transfer episodes: caption, remap, recompose, act with the source policy.

Three ways of turning a target state into a source state are compared:

``source-direct``
    read the target scene literally in the source world;
``remap``
    render a caption, rewrite it with a semantic operator, parse it and put
    the parsed labels back onto the unchanged agent cell;
``oracle-h``
    apply the exact lift ``h`` of the case's object relabeling.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .analogy import check_affordance_preserving, induced_policy, state_map
from .gridworld import ACTIONS, CaseFixture, GridSpec, GridWorld, cached_world
from .mdp import (
    ContractViolation,
    FactoredState,
    evaluate_policy,
    greedy_policy,
    q_from_v,
    softmax_policy,
    value_iteration,
)
from .semantics.captions import CaptionError, parse_caption
from .semantics.operator import Operator, OperatorContext, OperatorError, rule_operator

log = logging.getLogger(__name__)

VARIANTS = ("source-direct", "remap", "oracle-h")
OUTCOMES = ("target_picked", "distractor_picked", "timeout", "pipeline_error")


@dataclass(frozen=True)
class PipelineConfig:
    operator: str = "rule"  # rule | remote | fallback
    artifact_noise_rate: float = 0.0
    rng_seed: int = 0
    episodes: int = 100
    policy_mode: str = "greedy"  # greedy | softmax
    temperature: float = 0.1

    def __post_init__(self) -> None:
        if self.operator not in ("rule", "remote", "fallback"):
            raise ContractViolation(f"unknown operator mode {self.operator!r}")
        if not 0.0 <= self.artifact_noise_rate <= 1.0:
            raise ContractViolation("artifact noise rate must lie in [0, 1]")
        if self.episodes < 1:
            raise ContractViolation("need at least one episode")
        if self.policy_mode not in ("greedy", "softmax"):
            raise ContractViolation(f"unknown policy mode {self.policy_mode!r}")
        if self.policy_mode == "softmax" and not self.temperature > 0:
            raise ContractViolation("softmax temperature must be positive")


@dataclass(frozen=True)
class NoiseChannel:
    """Imagined object fails to appear with probability ``rate``.

    Each draw is a pure function of ``(seed, episode, step, state)``, so the
    same draws are shared across rates and a higher rate drops a superset.
    """

    rate: float = 0.0
    seed: tuple[int, ...] = (0,)

    def drops(self, episode: int, step: int, state: int) -> bool:
        if self.rate <= 0.0:
            return False
        if self.rate >= 1.0:
            return True
        rng = np.random.default_rng([*self.seed, episode, step, state])
        return bool(rng.random() < self.rate)


class Imagination(NamedTuple):
    state: FactoredState
    caption: str
    remapped: str
    imagined: bool
    dropped: bool


@lru_cache(maxsize=2048)
def solve_source(spec: GridSpec, policy_mode: str = "greedy", temperature: float = 0.1) -> np.ndarray:
    """Source policy for a layout: exact optimum, greedy or softened."""
    world = cached_world(spec)
    value, policy = value_iteration(world.mdp, tol=1e-10)
    if policy_mode != "greedy":
        policy = softmax_policy(q_from_v(world.mdp, value), temperature)
    policy.flags.writeable = False
    return policy


def imagine_state(
    state: FactoredState,
    target: GridWorld,
    ctx: OperatorContext,
    operator: Operator,
    composer: GridWorld,
    noise: NoiseChannel = NoiseChannel(),
    key: tuple[int, int] = (0, 0),
) -> Imagination:
    """Render, remap, parse and recompose one target state into the source world.

    ``composer`` is the source world: it supplies the label vocabulary for
    parsing and places parsed labels into its slots around the agent cell.
    ``key`` is ``(episode, step)`` for the noise channel.
    """
    caption = target.render(state)
    result = operator(ctx.with_caption(caption))
    parsed = parse_caption(result.description, composer.spec.vocabulary)
    imagined = composer.compose(state.u, parsed)
    dropped = noise.drops(key[0], key[1], target.index(state))
    if dropped:
        imagined = FactoredState(state.u, composer.empty_v)
    return Imagination(imagined, caption.text, result.description, result.imagine, dropped)


def choose_action(probs: np.ndarray, mode: str, rng: np.random.Generator | None = None) -> int:
    if mode == "greedy":
        return int(np.argmax(greedy_policy(probs[None, :])[0]))
    if rng is None:
        raise ContractViolation("softmax action selection needs a random generator")
    return int(rng.choice(len(probs), p=probs))


@dataclass
class EpisodeSetup:
    """Everything an episode needs for one layout of a case."""

    fixture: CaseFixture
    target: GridWorld
    source: GridWorld
    source_policy: np.ndarray
    h: np.ndarray
    direct: np.ndarray
    context: OperatorContext

    @classmethod
    def build(cls, fixture: CaseFixture, config: PipelineConfig = PipelineConfig()) -> "EpisodeSetup":
        source, target = fixture.worlds()
        return cls(
            fixture=fixture,
            target=target,
            source=source,
            source_policy=solve_source(fixture.source_spec, config.policy_mode, config.temperature),
            h=state_map(fixture.semantic_map(), target.num_cells),
            direct=state_map(fixture.identity_map(), target.num_cells),
            context=fixture.context(),
        )


class Pipeline:
    """Perception-to-action path for one variant."""

    def __init__(
        self,
        setup: EpisodeSetup,
        variant: str,
        config: PipelineConfig = PipelineConfig(),
        operator: Operator = rule_operator,
        noise: NoiseChannel | None = None,
    ):
        if variant not in VARIANTS:
            raise ContractViolation(f"unknown variant {variant!r}")
        self.setup = setup
        self.variant = variant
        self.config = config
        self.operator = operator
        self.noise = noise or NoiseChannel(config.artifact_noise_rate, (config.rng_seed,))

    def perceive(self, s: int, episode: int = 0, step: int = 0) -> Imagination:
        st = self.setup
        state = st.target.state(s)
        if self.variant == "remap":
            return imagine_state(state, st.target, st.context, self.operator, st.source, self.noise, (episode, step))
        caption = st.target.render(state).text
        images = st.h if self.variant == "oracle-h" else st.direct
        mapped = st.source.state(int(images[s]))
        dropped = self.noise.drops(episode, step, s)
        if dropped:
            mapped = FactoredState(mapped.u, st.source.empty_v)
        remapped = st.source.render(mapped).text
        return Imagination(mapped, caption, remapped, remapped != caption, dropped)

    def act(self, imagined: FactoredState, rng: np.random.Generator | None = None) -> int:
        probs = self.setup.source_policy[self.setup.source.index(imagined)]
        return choose_action(probs, self.config.policy_mode, rng)


def zero_shot_step(
    s: int, pipeline: Pipeline, rng: np.random.Generator | None = None, episode: int = 0, step: int = 0
) -> int:
    return pipeline.act(pipeline.perceive(s, episode, step).state, rng)


@dataclass
class EpisodeRecord:
    outcome: str
    steps: int
    start: int
    actions: list[int] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    error: str | None = None


def _variant_code(variant: str) -> int:
    return zlib.crc32(variant.encode())


def run_episode(pipeline: Pipeline, start: int, seed: int = 0, episode: int = 0) -> EpisodeRecord:
    target = pipeline.setup.target
    rng = np.random.default_rng([seed, episode, _variant_code(pipeline.variant), 1])
    record = EpisodeRecord("timeout", 0, int(start))
    s = int(start)
    for t in range(target.spec.max_steps):
        try:
            imag = pipeline.perceive(s, episode, t)
            action = pipeline.act(imag.state, rng)
        except (OperatorError, CaptionError, ContractViolation) as exc:
            record.outcome = "pipeline_error"
            record.error = f"{type(exc).__name__}: {exc}"
            record.steps = t
            return record
        outcome = target.pick_outcome(s, action)
        record.actions.append(action)
        record.trace.append(
            {
                "step": t,
                "state": list(target.state(s)),
                "scene": target.vocab[target.state(s).v],
                "caption": imag.caption,
                "remapped_caption": imag.remapped,
                "imagined_state": list(imag.state),
                "imagined_scene": pipeline.setup.source.vocab[imag.state.v],
                "dropped": imag.dropped,
                "action": ACTIONS[action],
            }
        )
        s = target.next_state(s, action)
        if outcome is not None:
            record.outcome = f"{outcome}_picked"
            record.steps = t + 1
            return record
    record.steps = target.spec.max_steps
    return record


def replay(target: GridWorld, start: int, actions: Sequence[int]) -> str:
    """Outcome of executing a recorded action sequence from ``start``."""
    s = int(start)
    for t, action in enumerate(actions):
        outcome = target.pick_outcome(s, action)
        s = target.next_state(s, action)
        if outcome is not None:
            return f"{outcome}_picked"
    return "timeout" if len(actions) >= target.spec.max_steps else "incomplete"


def episode_layout(fixture: CaseFixture, seed: int, episode: int) -> tuple[CaseFixture, int]:
    """Layout and start cell for one episode, derived from ``(seed, episode)`` only."""
    rng = np.random.default_rng([seed, episode, 0])
    laid_out = fixture.relayout(rng)
    starts = cached_world(laid_out.target_spec).start_states()
    return laid_out, int(starts[rng.integers(len(starts))])


@dataclass
class EvalReport:
    case_id: int
    variant: str
    seed: int
    episodes: int
    target_picked: int = 0
    distractor_picked: int = 0
    timeouts: int = 0
    pipeline_errors: int = 0

    def add(self, outcome: str) -> None:
        if outcome == "target_picked":
            self.target_picked += 1
        elif outcome == "distractor_picked":
            self.distractor_picked += 1
        elif outcome == "timeout":
            self.timeouts += 1
        else:
            self.pipeline_errors += 1

    @property
    def balanced(self) -> bool:
        return self.target_picked + self.distractor_picked + self.timeouts + self.pipeline_errors == self.episodes


REPORT_COLUMNS = (
    "case",
    "variant",
    "seed",
    "episodes",
    "target_picked",
    "distractor_picked",
    "timeouts",
    "pipeline_errors",
)
COUNT_FIELDS = ("target_picked", "distractor_picked", "timeouts", "pipeline_errors")


def variant_name(variant: str, config: PipelineConfig) -> str:
    return f"remap-{config.operator}" if variant == "remap" else variant


def evaluate(
    fixture: CaseFixture,
    variants: Sequence[str] = VARIANTS,
    episodes: int = 100,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    config: PipelineConfig = PipelineConfig(),
    operator: Operator = rule_operator,
    trace_sink: Callable[[str, EpisodeRecord], None] | None = None,
) -> list[EvalReport]:
    """Run every variant on the same per-seed episode layouts and count outcomes."""
    reports = {(v, seed): EvalReport(fixture.case_id, variant_name(v, config), seed, episodes) for v in variants for seed in seeds}
    for seed in seeds:
        for ep in range(episodes):
            laid_out, start = episode_layout(fixture, seed, ep)
            setup = EpisodeSetup.build(laid_out, config)
            noise = NoiseChannel(config.artifact_noise_rate, (config.rng_seed, seed))
            for v in variants:
                pipeline = Pipeline(setup, v, config, operator, noise)
                record = run_episode(pipeline, start, seed, ep)
                reports[(v, seed)].add(record.outcome)
                if trace_sink is not None:
                    trace_sink(f"case{fixture.case_id}-{variant_name(v, config)}-s{seed}-e{ep}", record)
    return [reports[(v, seed)] for v in variants for seed in seeds]


def aggregate(reports: Sequence[EvalReport]) -> list[dict]:
    """Mean and population standard deviation of each count over seeds."""
    groups: dict[tuple[int, str], list[EvalReport]] = {}
    for r in reports:
        groups.setdefault((r.case_id, r.variant), []).append(r)
    rows = []
    for (case_id, variant), group in groups.items():
        row = {"case": case_id, "variant": variant, "seeds": len(group), "episodes": group[0].episodes}
        for name in COUNT_FIELDS:
            values = np.array([getattr(r, name) for r in group], dtype=float)
            row[f"{name}_mean"] = float(values.mean())
            row[f"{name}_std"] = float(values.std())
        rows.append(row)
    return rows


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in reports:
        writer.writerow(
            [r.case_id, r.variant, r.seed, r.episodes, r.target_picked, r.distractor_picked, r.timeouts, r.pipeline_errors]
        )
    return buf.getvalue()


def write_eval_reports(reports: Sequence[EvalReport], out_dir: str | Path, config: dict | None = None) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "report.csv", out / "report.json"
    csv_path.write_text(reports_to_csv(reports))
    payload = {
        "config": config or {},
        "reports": [asdict(r) for r in reports],
        "aggregates": aggregate(reports),
    }
    json_path.write_text(json.dumps(payload, indent=2))
    return csv_path, json_path


def write_trace(record: EpisodeRecord, path: str | Path) -> None:
    with open(path, "w") as fh:
        for step in record.trace:
            fh.write(json.dumps(step) + "\n")


# -- fixture verification ----------------------------------------------------


@dataclass
class FixtureCheck:
    case_id: int
    certificate_valid: bool
    certificate_summary: str
    value_gap: float
    pipeline_mismatches: int
    details: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.certificate_valid and self.value_gap <= 1e-6 and self.pipeline_mismatches == 0


def check_fixture(fixture: CaseFixture, temperature: float = 0.5, tol: float = 1e-10) -> FixtureCheck:
    """Affordance certificate, value preservation and pipeline/h agreement for one layout."""
    source, target = fixture.worlds()
    phi = fixture.semantic_map()
    cert = check_affordance_preserving(source.mdp, target.mdp, phi)
    details = [cert.summary()]
    details += [f"reward violation: {v}" for v in cert.reward_violations[:20]]
    details += [f"transition violation: {v}" for v in cert.transition_violations[:20]]

    h = state_map(phi, target.num_cells)
    v_star, _ = value_iteration(source.mdp, tol)
    pi_s = softmax_policy(q_from_v(source.mdp, v_star), temperature)
    v_source = evaluate_policy(source.mdp, pi_s, tol)
    v_target = evaluate_policy(target.mdp, induced_policy(pi_s, h), tol)
    gap = float(np.max(np.abs(v_target - v_source[h])))

    setup = EpisodeSetup.build(fixture)
    pipe = Pipeline(setup, "remap")
    mismatches = 0
    for s in target.nonterminal_states():
        try:
            imagined = pipe.perceive(s).state
        except (OperatorError, CaptionError) as exc:
            details.append(f"pipeline error at {target.state(s)}: {exc}")
            mismatches += 1
            continue
        if source.index(imagined) != h[s]:
            mismatches += 1
    return FixtureCheck(fixture.case_id, cert.valid, cert.summary(), gap, mismatches, details)
