"""Semantic operators that rewrite a target observation caption into source terms."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .captions import Caption


class OperatorError(RuntimeError):
    """Base class for failures of a semantic operator."""


class OperatorSchemaError(OperatorError):
    """Operator output is not exactly one ``{"imagine", "description"}`` object."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class TaskSpec:
    reward_object: str
    distractor_object: str | None = None
    environment_descriptors: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.reward_object == self.distractor_object:
            raise ValueError("reward and distractor objects must differ")
        object.__setattr__(self, "environment_descriptors", tuple(self.environment_descriptors))

    def describe(self) -> str:
        text = f"Pick the {self.reward_object}"
        if self.distractor_object:
            text += f" and avoid the {self.distractor_object}"
        if self.environment_descriptors:
            text += " in a room where " + "; ".join(self.environment_descriptors)
        return text + "."


@dataclass(frozen=True)
class OperatorContext:
    environment_brief: str
    source_task: TaskSpec
    target_task: TaskSpec
    observation_caption: Caption = field(default_factory=lambda: Caption(""))

    def with_caption(self, caption: Caption | str) -> "OperatorContext":
        if isinstance(caption, str):
            caption = Caption(caption)
        return replace(self, observation_caption=caption)

    def task_hash(self) -> str:
        """Digest of everything except the observation; keys the remote-call cache."""
        payload = {
            "brief": self.environment_brief,
            "source": asdict(self.source_task),
            "target": asdict(self.target_task),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class OperatorResult(BaseModel):
    model_config = ConfigDict(strict=True, extra="forbid", frozen=True)

    imagine: bool
    description: str = Field(min_length=1)


Operator = Callable[[OperatorContext], OperatorResult]


def validate_operator_output(raw: str) -> OperatorResult:
    """Parse operator output that must be exactly one JSON result object.

    Surrounding whitespace is tolerated; fences, commentary and extra or
    missing fields are not.
    """
    if not isinstance(raw, str):
        raise OperatorSchemaError("operator output must be text", repr(raw))
    try:
        return OperatorResult.model_validate_json(raw.strip())
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<document>"
        raise OperatorSchemaError(f"invalid operator output ({where}: {first['msg']})", raw) from exc


# -- rule-based operator ------------------------------------------------------

RULES = ("reward", "distractor", "environment")


def _rewrites(ctx: OperatorContext, rule: str) -> list[tuple[str, str]]:
    src, tgt = ctx.source_task, ctx.target_task
    if rule == "reward":
        return [(tgt.reward_object, src.reward_object)] if tgt.reward_object != src.reward_object else []
    if rule == "distractor":
        # covers the old source reward reappearing as the target's distractor
        if tgt.distractor_object and src.distractor_object and tgt.distractor_object != src.distractor_object:
            return [(tgt.distractor_object, src.distractor_object)]
        return []
    if rule == "environment":
        return [(t, s) for t, s in zip(tgt.environment_descriptors, src.environment_descriptors) if t != s]
    raise ValueError(f"unknown rule {rule!r}")


def rule_operator(ctx: OperatorContext, order: Sequence[str] = RULES) -> OperatorResult:
    """Deterministic remapping of target labels and descriptors to source ones.

    All rewrites are applied in one pass over the original caption, so a label
    produced by one rule is never rewritten again by another. ``order`` only
    decides precedence when two rules claim the same phrase.
    """
    text = ctx.observation_caption.text
    table: dict[str, str] = {}
    for rule in order:
        for old, new in _rewrites(ctx, rule):
            table.setdefault(old, new)
    if not table:
        return OperatorResult(imagine=False, description=text)
    pattern = re.compile(
        r"(?<![\w])(" + "|".join(re.escape(k) for k in sorted(table, key=len, reverse=True)) + r")(?![\w])"
    )
    out, n = pattern.subn(lambda m: table[m.group(1)], text)
    if n == 0:
        return OperatorResult(imagine=False, description=text)
    return OperatorResult(imagine=True, description=out)


# -- prompt for remote operators ----------------------------------------------

SYSTEM_PROMPT = """\
You help a reinforcement-learning agent reuse a skill it already has on a new task.
The agent only knows how to solve its source task. Given a caption of what the agent
currently observes in the target task, rewrite the caption so that the scene reads as
an instance of the source task, and the agent's known behaviour solves the target task.

The user message has four parts: the environment brief, the task the agent knows
(source), the task it must solve now (target), and the caption of the current observation.

Rewrite rules:
- Change as little as possible. Keep every position, number and sentence structure.
- The target's reward object becomes the source's reward object.
- An object the target asks the agent to avoid becomes the source's object to avoid.
- Wall and floor descriptions that differ from the source become the source's.
- Never add, remove or move objects.
- If the caption already fits the source task, leave it unchanged.

Reply with a single JSON object and nothing else:
{"imagine": <true if you changed the caption, else false>, "description": "<caption>"}
No markdown, no code fences, no text before or after the JSON.
"""


def build_user_message(ctx: OperatorContext) -> str:
    return "\n".join(
        [
            f"1. Environment brief: {ctx.environment_brief}",
            f"2. What the agent knows: {ctx.source_task.describe()}",
            f"3. Target task: {ctx.target_task.describe()}",
            f"4. Current observation: {ctx.observation_caption.text}",
        ]
    )


def build_messages(ctx: OperatorContext) -> list[dict[str, str]]:
    return [
        {"role": "system", "content": SYSTEM_PROMPT},
        {"role": "user", "content": build_user_message(ctx)},
    ]
