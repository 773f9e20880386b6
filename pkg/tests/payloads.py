"""Reference operator payloads and schema-breaking mutations of them."""

import itertools
import json

import numpy as np

EXAMPLE_1_IN = (
    "A yellow duckie is visible at 1.0 units and 34.3 degrees to the left, and a green ball is visible at "
    "3.1 units and 32.9 degrees to the left, both located on a green grass floor surrounded by grey walls "
    "under a blue sky."
)
EXAMPLE_1_OUT = (
    "A blue box is visible at 1.0 units and 34.3 degrees to the left, and a green ball is visible at "
    "3.1 units and 32.9 degrees to the left, both located on a green grass floor surrounded by grey walls "
    "under a blue sky."
)
EXAMPLE_2 = (
    "A green ball is visible at a distance of 4.2 units and an angle of 24.6 degrees to the left, located "
    "on a green grass floor surrounded by gray walls under a blue sky."
)
EXAMPLE_3_IN = (
    "A yellow duckie is visible at 1.0 units and 34.3 degrees to the left, and a blue box is visible at "
    "3.1 units and 32.9 degrees to the left, both located on a wodden floor surrounded by brick walls "
    "under a blue sky."
)
EXAMPLE_3_OUT = (
    "A blue box is visible at 1.0 units and 34.3 degrees to the left, and a green ball is visible at "
    "3.1 units and 32.9 degrees to the left, both located on a green grass floor surrounded by grey walls "
    "under a blue sky."
)

EXAMPLE_PAYLOADS = [
    json.dumps({"imagine": True, "description": EXAMPLE_1_OUT}),
    json.dumps({"imagine": False, "description": EXAMPLE_2}),
    json.dumps({"imagine": True, "description": EXAMPLE_3_OUT}),
]

_BAD_VALUES = [None, 0, 1, 1.5, "true", "yes", "", [], {}, [True], {"text": "x"}]
_COMMENTARY = [
    "\nNote: the duckie was remapped.",
    " Hope this helps!",
    "\n\nReasoning: nothing else changed.",
    "\n```",
    ",",
    "{}",
    '\n{"imagine": false, "description": "again"}',
]
_PREFIXES = ["```json\n", "Here is the JSON:\n", "Answer: ", "json ", "[", "// output\n"]


def mutations(payload: str, rng: np.random.Generator | None = None):
    """Yield schema-breaking variants of one valid payload."""
    doc = json.loads(payload)
    keys = list(doc)
    # dropped fields
    for k in keys:
        yield json.dumps({x: v for x, v in doc.items() if x != k})
    yield "{}"
    # retyped fields (empty description counts as a retype to an invalid value)
    for k, bad in itertools.product(keys, _BAD_VALUES):
        if k == "imagine" and isinstance(bad, bool):
            continue
        if k == "description" and isinstance(bad, str) and bad:
            continue
        yield json.dumps({**doc, k: bad})
    # renamed and extra fields
    for k in keys:
        yield json.dumps({**{x: v for x, v in doc.items() if x != k}, k.upper(): doc[k]})
        yield json.dumps({**{x: v for x, v in doc.items() if x != k}, k + "_": doc[k]})
    for extra in ("reasoning", "confidence", "notes", "Imagine"):
        yield json.dumps({**doc, extra: "extra"})
    # commentary, fences and wrappers
    for tail in _COMMENTARY:
        yield payload + tail
    for head in _PREFIXES:
        yield head + payload
    yield "```json\n" + payload + "\n```"
    yield json.dumps([doc])
    yield json.dumps(json.dumps(doc))
    # truncations
    for cut in range(1, len(payload), max(1, len(payload) // 25)):
        yield payload[:cut]
    if rng is not None:
        # random single-character deletions that break the JSON syntax
        for i in rng.choice(len(payload), size=min(40, len(payload)), replace=False):
            broken = payload[:i] + payload[i + 1 :]
            try:
                parsed = json.loads(broken)
            except ValueError:
                yield broken
                continue
            if parsed != doc and not _still_valid(parsed):
                yield broken


def _still_valid(obj) -> bool:
    return (
        isinstance(obj, dict)
        and set(obj) == {"imagine", "description"}
        and isinstance(obj["imagine"], bool)
        and isinstance(obj["description"], str)
        and obj["description"] != ""
    )


def rule_payloads(limit: int = 30) -> list[str]:
    """Serialized rule-operator outputs over rendered case-fixture captions."""
    from analogylab.gridworld import make_case_fixture
    from analogylab.semantics import rule_operator

    out = []
    for case in (1, 2, 3):
        fixture = make_case_fixture(case, rng_seed=case)
        _, target = fixture.worlds()
        ctx = fixture.context()
        for s in target.nonterminal_states()[:: max(1, len(target.nonterminal_states()) // (limit // 3))]:
            out.append(rule_operator(ctx.with_caption(target.render(s))).model_dump_json())
    return out


def all_mutations(seed: int = 0) -> list[str]:
    """Distinct mutations of the reference payloads and of serialized rule outputs."""
    rng = np.random.default_rng(seed)
    out = []
    for payload in EXAMPLE_PAYLOADS + rule_payloads():
        out.extend(mutations(payload, rng))
    return list(dict.fromkeys(out))
