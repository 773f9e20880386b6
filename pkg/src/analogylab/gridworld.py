"""Deterministic pick-and-avoid gridworlds and the three transfer cases.

A gridworld state is ``(u, v)``: ``u`` is the agent's cell and ``v`` labels
the whole scene, i.e. which object sits in each slot of the layout.  The
slot positions are part of the world, not of the state, so one MDP covers
every relabeling of the same layout.  Scenes never change until an object is
picked; a successful pick of the reward or distractor object moves to the
absorbing ``done`` scene.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .analogy import SemanticMap
from .mdp import ContractViolation, FactoredState, TabularMdp
from .semantics.captions import (
    EMPTY,
    TERMINAL,
    Caption,
    CaptionError,
    EnvDescriptor,
    ParsedCaption,
    render_caption,
    scene_label,
    scene_objects,
)
from .semantics.operator import OperatorContext, TaskSpec

ACTIONS = ("up", "down", "left", "right", "pick")
PICK = ACTIONS.index("pick")
_MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}

ENVIRONMENT_BRIEF = (
    "The agent moves on a grid of cells (up, down, left, right) and can pick the object "
    "in its own cell. Picking the task's reward object ends the episode with a reward; "
    "picking the object to avoid ends it with a penalty. Walls and floor are decoration "
    "and never affect movement. Episodes also end after a fixed number of steps."
)


class GridSpecError(ContractViolation):
    pass


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    reward_object: str
    distractor_object: str | None = None
    wall_style: str = "grey"
    floor_style: str = "grey"
    object_layout: tuple[tuple[tuple[int, int], str], ...] = ()
    vocabulary: tuple[str, ...] = ()
    step_penalty: float = 0.0
    pick_reward: float = 1.0
    distractor_penalty: float = -1.0
    max_steps: int | None = None
    gamma: float = 0.9

    def __post_init__(self) -> None:
        layout = tuple((tuple(int(x) for x in cell), str(label)) for cell, label in self.object_layout)
        object.__setattr__(self, "object_layout", layout)
        vocab = tuple(self.vocabulary) or tuple(dict.fromkeys(label for _, label in layout))
        object.__setattr__(self, "vocabulary", vocab)
        if self.max_steps is None:
            object.__setattr__(self, "max_steps", 4 * (self.width + self.height))
        self.validate()

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise GridSpecError("grid must have at least one cell")
        cells = [cell for cell, _ in self.object_layout]
        if len(set(cells)) != len(cells):
            raise GridSpecError("two objects share a cell")
        for (r, c), label in self.object_layout:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise GridSpecError(f"object {label!r} placed outside the grid at {(r, c)}")
            if label not in self.vocabulary:
                raise GridSpecError(f"object {label!r} not in the declared vocabulary")
        if [label for _, label in self.object_layout].count(self.reward_object) != 1:
            raise GridSpecError("the reward object must be placed exactly once")
        if self.reward_object == self.distractor_object:
            raise GridSpecError("reward and distractor objects must differ")
        if self.distractor_object is not None and self.distractor_object not in self.vocabulary:
            raise GridSpecError("distractor object not in the declared vocabulary")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise GridSpecError("vocabulary contains duplicates")
        if self.max_steps < 1:
            raise GridSpecError("max_steps must be positive")

    @property
    def slots(self) -> tuple[tuple[int, int], ...]:
        return tuple(cell for cell, _ in self.object_layout)

    @property
    def scene(self) -> tuple[str, ...]:
        return tuple(label for _, label in self.object_layout)

    def with_layout(self, layout: Sequence[tuple[tuple[int, int], str]]) -> "GridSpec":
        return replace(self, object_layout=tuple(layout))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["object_layout"] = [{"row": r, "col": c, "label": label} for (r, c), label in self.object_layout]
        d["vocabulary"] = list(self.vocabulary)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        data = dict(data)
        data["object_layout"] = tuple(
            ((item["row"], item["col"]), item["label"]) for item in data.get("object_layout", [])
        )
        data["vocabulary"] = tuple(data.get("vocabulary", ()))
        return cls(**data)


class GridWorld:
    """Tabular MDP of a :class:`GridSpec` plus its factored view."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        k = len(spec.object_layout)
        scenes = [scene_label(t) for t in itertools.product(spec.vocabulary, repeat=k)]
        self.vocab: tuple[str, ...] = tuple(scenes) + (EMPTY, TERMINAL)
        self._scene_index = {label: i for i, label in enumerate(self.vocab)}
        self.terminal_v = self._scene_index[TERMINAL]
        self.empty_v = self._scene_index[EMPTY]
        self.mdp = self._build()
        self._next = np.argmax(self.mdp.transition, axis=2)

    # -- geometry ----------------------------------------------------------

    @property
    def num_cells(self) -> int:
        return self.spec.width * self.spec.height

    def cell(self, u: int) -> tuple[int, int]:
        return divmod(int(u), self.spec.width)

    def u_of(self, row: int, col: int) -> int:
        return row * self.spec.width + col

    def _move(self, u: int, action: int) -> int:
        r, c = self.cell(u)
        dr, dc = _MOVES[action]
        r2, c2 = r + dr, c + dc
        if 0 <= r2 < self.spec.height and 0 <= c2 < self.spec.width:
            return self.u_of(r2, c2)
        return u

    def _build(self) -> TabularMdp:
        spec = self.spec
        nv = len(self.vocab)
        n = self.num_cells * nv
        T = np.zeros((n, len(ACTIONS), n))
        R = np.zeros((n, len(ACTIONS)))
        slot_of = {self.u_of(*cell): i for i, cell in enumerate(spec.slots)}
        for u in range(self.num_cells):
            for v, label in enumerate(self.vocab):
                s = u * nv + v
                if v == self.terminal_v:
                    T[s, :, s] = 1.0
                    continue
                for a in _MOVES:
                    T[s, a, self._move(u, a) * nv + v] = 1.0
                    R[s, a] = spec.step_penalty
                objects = scene_objects(label)
                obj = objects[slot_of[u]] if objects and u in slot_of else None
                if obj is not None and obj == spec.reward_object:
                    T[s, PICK, u * nv + self.terminal_v] = 1.0
                    R[s, PICK] = spec.pick_reward
                elif obj is not None and obj == spec.distractor_object:
                    T[s, PICK, u * nv + self.terminal_v] = 1.0
                    R[s, PICK] = spec.distractor_penalty
                else:
                    T[s, PICK, s] = 1.0
                    R[s, PICK] = spec.step_penalty
        return TabularMdp(self.num_cells, self.vocab, len(ACTIONS), T, R, spec.gamma)

    # -- factored view -----------------------------------------------------

    def scene_index(self, objects: Sequence[str]) -> int:
        try:
            return self._scene_index[scene_label(tuple(objects))]
        except KeyError:
            raise ContractViolation(f"scene {tuple(objects)} not in this world's vocabulary") from None

    @property
    def actual_v(self) -> int:
        return self.scene_index(self.spec.scene)

    def index(self, state: FactoredState) -> int:
        return self.mdp.index(state)

    def state(self, index: int) -> FactoredState:
        return self.mdp.state(index)

    def is_terminal(self, s: int | FactoredState) -> bool:
        state = self.state(s) if isinstance(s, (int, np.integer)) else s
        return state.v == self.terminal_v

    def start_states(self) -> list[int]:
        """Non-object cells in this world's own scene, as flat indices."""
        occupied = {self.u_of(*cell) for cell in self.spec.slots}
        v = self.actual_v
        return [self.index(FactoredState(u, v)) for u in range(self.num_cells) if u not in occupied]

    def nonterminal_states(self) -> list[int]:
        return [s for s in range(self.mdp.num_states) if not self.is_terminal(s)]

    def next_state(self, s: int, action: int) -> int:
        return int(self._next[s, action])

    def pick_outcome(self, s: int, action: int) -> str | None:
        """``"target"`` or ``"distractor"`` when the action picks that object, else ``None``."""
        if action != PICK:
            return None
        state = self.state(s)
        if state.v in (self.terminal_v, self.empty_v):
            return None
        objects = scene_objects(self.vocab[state.v])
        cell = self.cell(state.u)
        if cell not in self.spec.slots:
            return None
        obj = objects[self.spec.slots.index(cell)]
        if obj == self.spec.reward_object:
            return "target"
        if obj == self.spec.distractor_object:
            return "distractor"
        return None

    @cached_property
    def env_descriptor(self) -> EnvDescriptor:
        return EnvDescriptor(
            self.spec.width, self.spec.slots, self.vocab, self.spec.wall_style, self.spec.floor_style
        )

    def render(self, state: FactoredState | int) -> Caption:
        if isinstance(state, (int, np.integer)):
            state = self.state(state)
        return render_caption(state, self.env_descriptor)

    def compose(self, u: int, parsed: ParsedCaption) -> FactoredState:
        """Place parsed object labels into this world's slots, keeping the agent cell ``u``."""
        if not parsed.objects:
            return FactoredState(int(u), self.empty_v)
        by_cell = dict((cell, label) for label, cell in parsed.objects)
        if len(by_cell) != len(parsed.objects) or set(by_cell) != set(self.spec.slots):
            raise CaptionError(
                f"described objects at {sorted(by_cell)} do not match the layout slots {list(self.spec.slots)}"
            )
        labels = [by_cell[cell] for cell in self.spec.slots]
        missing = [x for x in labels if x not in self.spec.vocabulary]
        if missing:
            raise CaptionError(f"labels {missing} unknown to this world")
        return FactoredState(int(u), self.scene_index(labels))

    def task_spec(self) -> TaskSpec:
        return TaskSpec(
            reward_object=self.spec.reward_object,
            distractor_object=self.spec.distractor_object,
            environment_descriptors=(
                f"The walls are {self.spec.wall_style}",
                f"The floor is {self.spec.floor_style}",
            ),
        )

    def ascii(self, state: FactoredState | int) -> str:
        """Rows of characters: ``@`` agent, first letter of each object, ``.`` empty."""
        if isinstance(state, (int, np.integer)):
            state = self.state(state)
        label = self.vocab[state.v]
        objects = () if label in (EMPTY, TERMINAL) else scene_objects(label)
        grid = [["." for _ in range(self.spec.width)] for _ in range(self.spec.height)]
        for obj, (r, c) in zip(objects, self.spec.slots):
            grid[r][c] = obj[0].upper() if obj == self.spec.reward_object else obj[0].lower()
        r, c = self.cell(state.u)
        grid[r][c] = "*" if label == TERMINAL else "@"
        return "\n".join("".join(row) for row in grid)


def make_gridworld(spec: GridSpec) -> GridWorld:
    return GridWorld(spec)


def scene_map(phi: dict[str, str], target: GridWorld, source: GridWorld) -> SemanticMap:
    """Lift an object-level relabeling to the two worlds' scene vocabularies."""
    mapping = {EMPTY: EMPTY, TERMINAL: TERMINAL}
    for label in target.vocab:
        if label in (EMPTY, TERMINAL):
            continue
        mapping[label] = scene_label(tuple(phi[obj] for obj in scene_objects(label)))
    return SemanticMap.from_labels(mapping, target.vocab, source.vocab)


# -- transfer cases ----------------------------------------------------------

DEFAULT_ROLES = {
    "source_reward": "red ball",
    "source_distractor": "green ball",
    "target_reward": "purple box",
    "source_wall": "grey",
    "target_wall": "blue",
    "floor": "grey",
}


@dataclass(frozen=True)
class CaseFixture:
    case_id: int
    source_spec: GridSpec
    target_spec: GridSpec
    phi: dict[str, str] = field(hash=False)
    expected_rule_rewrites: tuple[str, ...] = ()

    def worlds(self) -> tuple[GridWorld, GridWorld]:
        return cached_world(self.source_spec), cached_world(self.target_spec)

    def semantic_map(self) -> SemanticMap:
        source, target = self.worlds()
        return scene_map(self.phi, target, source)

    def identity_map(self) -> SemanticMap:
        """Read target labels literally in the source world (no imagination)."""
        source, target = self.worlds()
        return scene_map({x: x for x in self.target_spec.vocabulary}, target, source)

    def context(self) -> OperatorContext:
        source, target = self.worlds()
        return OperatorContext(ENVIRONMENT_BRIEF, source.task_spec(), target.task_spec())

    def with_slots(self, slots: Sequence[tuple[int, int]]) -> "CaseFixture":
        t_layout = [(cell, label) for cell, (_, label) in zip(slots, self.target_spec.object_layout)]
        s_layout = [(cell, label) for cell, (_, label) in zip(slots, self.source_spec.object_layout)]
        return replace(
            self,
            source_spec=self.source_spec.with_layout(s_layout),
            target_spec=self.target_spec.with_layout(t_layout),
        )

    def relayout(self, rng: np.random.Generator) -> "CaseFixture":
        spec = self.target_spec
        k = len(spec.object_layout)
        cells = rng.choice(spec.width * spec.height, size=k, replace=False)
        return self.with_slots([divmod(int(c), spec.width) for c in cells])

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "source_spec": self.source_spec.to_dict(),
            "target_spec": self.target_spec.to_dict(),
            "phi": dict(self.phi),
            "expected_rule_rewrites": list(self.expected_rule_rewrites),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CaseFixture":
        return cls(
            case_id=int(data["case_id"]),
            source_spec=GridSpec.from_dict(data["source_spec"]),
            target_spec=GridSpec.from_dict(data["target_spec"]),
            phi=dict(data["phi"]),
            expected_rule_rewrites=tuple(data.get("expected_rule_rewrites", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CaseFixture":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "CaseFixture":
        return cls.from_json(Path(path).read_text())


def make_case_fixture(
    case_id: int,
    vocab: dict[str, str] | None = None,
    rng_seed: int = 0,
    width: int = 5,
    height: int = 5,
) -> CaseFixture:
    """Source task plus one of the three target cases on a random two-object layout.

    Case 1 swaps the reward object, case 2 also changes the wall style, and
    case 3 turns the source reward object into the target's distractor.
    """
    if case_id not in (1, 2, 3):
        raise ContractViolation(f"case_id must be 1, 2 or 3, got {case_id!r}")
    roles = {**DEFAULT_ROLES, **(vocab or {})}
    src_r, src_d, tgt_r = roles["source_reward"], roles["source_distractor"], roles["target_reward"]
    if len({src_r, src_d, tgt_r}) != 3:
        raise ContractViolation("source reward, source distractor and target reward must be distinct labels")
    world = (src_r, src_d, tgt_r)

    if case_id == 3:
        tgt_d = src_r
        phi = {tgt_r: src_r, src_r: src_d}
    else:
        tgt_d = src_d
        phi = {tgt_r: src_r, src_d: src_d}
    wall = roles["target_wall"] if case_id == 2 else roles["source_wall"]

    rng = np.random.default_rng(rng_seed)
    cells = rng.choice(width * height, size=2, replace=False)
    slots = [divmod(int(c), width) for c in cells]
    target_labels = (tgt_r, tgt_d)
    target = GridSpec(
        width,
        height,
        reward_object=tgt_r,
        distractor_object=tgt_d,
        wall_style=wall,
        floor_style=roles["floor"],
        object_layout=tuple(zip(slots, target_labels)),
        vocabulary=target_labels,
    )
    source = GridSpec(
        width,
        height,
        reward_object=src_r,
        distractor_object=src_d,
        wall_style=roles["source_wall"],
        floor_style=roles["floor"],
        object_layout=tuple(zip(slots, (phi[x] for x in target_labels))),
        vocabulary=world,
    )
    rewrites = [f"{tgt_r} -> {src_r}"]
    if case_id == 3:
        rewrites.append(f"{src_r} -> {src_d}")
    if case_id == 2:
        rewrites.append(f"The walls are {wall} -> The walls are {roles['source_wall']}")
    return CaseFixture(case_id, source, target, phi, tuple(rewrites))


_WORLD_CACHE: dict[GridSpec, GridWorld] = {}


def cached_world(spec: GridSpec) -> GridWorld:
    world = _WORLD_CACHE.get(spec)
    if world is None:
        if len(_WORLD_CACHE) > 4096:
            _WORLD_CACHE.clear()
        world = _WORLD_CACHE[spec] = GridWorld(spec)
    return world
