"""Template captions for gridworld scenes and their exact inverse.

Grammar (single spaces between sentences)::

    caption  := objects " The walls are " WALL ". The floor is " FLOOR "."
    objects  := object (" " object)* | "No objects are visible."
    object   := "A " LABEL " is at row " INT ", column " INT "."

Scene labels join per-slot object labels with ``SCENE_SEP``; the reserved
labels ``EMPTY`` and ``TERMINAL`` stand for a scene without objects and for
the absorbing post-pick state.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..mdp import FactoredState

SCENE_SEP = " | "
EMPTY = "empty"
TERMINAL = "done"


class CaptionError(ValueError):
    pass


class CaptionParseError(CaptionError):
    def __init__(self, message: str, text: str, position: int):
        super().__init__(f"{message} at position {position}: {text[position:position + 40]!r}")
        self.text = text
        self.position = position


class UnknownLabelError(CaptionError):
    pass


def scene_label(objects: Sequence[str]) -> str:
    return SCENE_SEP.join(objects) if objects else EMPTY


def scene_objects(label: str) -> tuple[str, ...]:
    if label == EMPTY:
        return ()
    if label == TERMINAL:
        raise CaptionError("the terminal state has no scene")
    return tuple(label.split(SCENE_SEP))


@dataclass(frozen=True)
class Caption:
    text: str
    provenance: str = "rendered"  # rendered | operator-output | external


@dataclass(frozen=True)
class EnvDescriptor:
    """Everything besides the factored state that a caption needs."""

    width: int
    slots: tuple[tuple[int, int], ...]
    semantic_vocab: tuple[str, ...]
    wall: str
    floor: str


@dataclass(frozen=True)
class ParsedCaption:
    objects: tuple[tuple[str, tuple[int, int]], ...]
    wall: str
    floor: str

    @property
    def label(self) -> str | None:
        """The single object label, or ``None`` when nothing is visible."""
        return self.objects[0][0] if self.objects else None

    @property
    def location(self) -> tuple[int, int] | None:
        return self.objects[0][1] if self.objects else None


def render_caption(state: FactoredState, env: EnvDescriptor) -> Caption:
    try:
        label = env.semantic_vocab[state.v]
    except IndexError:
        raise UnknownLabelError(f"semantic index {state.v} not in the vocabulary") from None
    objects = scene_objects(label)
    if objects and len(objects) != len(env.slots):
        raise CaptionError(f"scene {label!r} does not fit {len(env.slots)} object slots")
    if objects:
        parts = [f"A {obj} is at row {r}, column {c}." for obj, (r, c) in zip(objects, env.slots)]
    else:
        parts = ["No objects are visible."]
    parts.append(f"The walls are {env.wall}.")
    parts.append(f"The floor is {env.floor}.")
    return Caption(" ".join(parts))


_OBJECT = re.compile(r"A ([a-z][a-z ]*?) is at row (\d+), column (\d+)\.")
_NOTHING = re.compile(r"No objects are visible\.")
_TAIL = re.compile(r"The walls are ([^.]+)\. The floor is ([^.]+)\.")


def parse_caption(caption: Caption | str, vocab: Iterable[str]) -> ParsedCaption:
    """Invert :func:`render_caption`; object labels must come from ``vocab``."""
    text = caption.text if isinstance(caption, Caption) else caption
    known = set(vocab)
    pos = 0
    objects: list[tuple[str, tuple[int, int]]] = []
    m = _NOTHING.match(text, pos)
    if m:
        pos = m.end() + 1
    else:
        while True:
            m = _OBJECT.match(text, pos)
            if not m:
                break
            if m.group(1) not in known:
                raise UnknownLabelError(f"unknown object label {m.group(1)!r}")
            objects.append((m.group(1), (int(m.group(2)), int(m.group(3)))))
            pos = m.end() + 1
        if not objects:
            raise CaptionParseError("expected an object sentence or 'No objects are visible.'", text, 0)
    if text[pos - 1 : pos] != " ":
        raise CaptionParseError("expected a space between sentences", text, pos - 1)
    tail = _TAIL.fullmatch(text, pos)
    if not tail:
        raise CaptionParseError("expected wall and floor sentences", text, pos)
    return ParsedCaption(tuple(objects), tail.group(1), tail.group(2))
