"""Long-term navigation memory: schema extraction and origin tracking.

Once per episode a navigation schema {primary direction, final target,
navigation pattern} is extracted from the instruction. During the episode
the state tracks the relative return direction (where the agent came from,
expressed in its current heading frame), plus a bounded ring of the most
recent actions, and renders both into a compact reflective prompt.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .actions import TWO_PI, Action, FORWARD, STOP, TURN_LEFT, TURN_RIGHT, WAYPOINT

RECENT_ACTION_WINDOW = 5

HEADING_STEPS = 12
HALF_TURN = HEADING_STEPS // 2

# Relative bearings count clockwise from the agent's nose: 0 = ahead,
# 3 = right, 6 = behind, 9 = left.
RELATIVE_LABELS = (
    "ahead",
    "ahead-right",
    "right-front",
    "right",
    "right-rear",
    "behind-right",
    "behind",
    "behind-left",
    "left-rear",
    "left",
    "left-front",
    "ahead-left",
)

_DIRECTION_WORDS = ("left", "right", "straight", "forward", "up", "down", "around")
_TARGET_MARKERS = ("stop at", "stop near", "stop in", "wait at", "at the")
_ARTICLES = {"the", "a", "an"}
_NON_NOUNS = _ARTICLES | set(_DIRECTION_WORDS) | {
    "and", "then", "to", "of", "in", "on", "at", "into", "onto", "through",
    "past", "by", "near", "walk", "go", "turn", "stop", "wait", "head",
    "move", "continue", "proceed", "until", "reach", "your", "you", "it",
    "is", "are", "with", "toward", "towards",
}


class SchemaExtractionError(RuntimeError):
    """Raised by pluggable extractors when they cannot produce a schema."""


@dataclass
class NavigationSchema:
    primary_dir: str
    final_target: str
    nav_pattern: str

    def __post_init__(self):
        if not (self.primary_dir and self.final_target and self.nav_pattern):
            raise ValueError("schema fields must be non-empty")

    def to_json(self) -> dict:
        return {
            "primary_dir": self.primary_dir,
            "final_target": self.final_target,
            "nav_pattern": self.nav_pattern,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NavigationSchema":
        return cls(obj["primary_dir"], obj["final_target"], obj["nav_pattern"])


SchemaExtractor = Callable[[str], NavigationSchema]


def _words(text: str) -> list[str]:
    return re.findall(r"[a-z']+", text.lower())


def _normalize_direction(word: str) -> str:
    if word in ("straight", "forward"):
        return "straight/forward"
    return word


def rule_based_schema(instruction: str) -> NavigationSchema:
    """Deterministic lexicon extractor used as the default and as the
    fallback when an external extractor fails."""
    lower = instruction.lower()
    words = _words(instruction)

    directions = [w for w in words if w in _DIRECTION_WORDS]
    primary = _normalize_direction(directions[0]) if directions else "unspecified"

    target = ""
    marker_pos = -1
    for marker in _TARGET_MARKERS:
        pos = lower.rfind(marker)
        if pos > marker_pos:
            marker_pos = pos
            tail = lower[pos + len(marker):]
            phrase = re.split(r"[.,;!?]", tail, maxsplit=1)[0]
            tokens = [t for t in _words(phrase) if t not in _ARTICLES]
            target = " ".join(tokens[:4])
    if not target:
        nouns = [w for w in words if w not in _NON_NOUNS]
        target = nouns[-1] if nouns else "unspecified"

    pattern = " then ".join(directions) if directions else "follow instruction"
    return NavigationSchema(primary_dir=primary, final_target=target, nav_pattern=pattern)


def extract_schema(
    instruction: str, extractor: SchemaExtractor | None = None
) -> NavigationSchema:
    """Extract the navigation schema, falling back to the rule-based
    extractor if the pluggable one fails. Called once per episode."""
    schema, _ = extract_schema_with_fallback(instruction, extractor)
    return schema


def extract_schema_with_fallback(
    instruction: str, extractor: SchemaExtractor | None = None
) -> tuple[NavigationSchema, bool]:
    """Like :func:`extract_schema` but also reports whether the fallback
    path was taken, so episode traces can record the event."""
    if not instruction or not instruction.strip():
        raise ValueError("instruction must be non-empty")
    if extractor is None:
        return rule_based_schema(instruction), False
    try:
        return extractor(instruction), False
    except Exception:
        return rule_based_schema(instruction), True


def opp(direction):
    """Reverse-direction mapping on either representation.

    Heading indices map d -> (d + 6) mod 12; angles map a -> (a + pi) mod 2pi.
    An involution in both cases.
    """
    if isinstance(direction, (int,)) and not isinstance(direction, bool):
        if not 0 <= direction < HEADING_STEPS:
            raise ValueError(f"heading index {direction} outside 0..{HEADING_STEPS - 1}")
        return (direction + HALF_TURN) % HEADING_STEPS
    if isinstance(direction, float):
        return (direction + math.pi) % TWO_PI
    raise TypeError(f"direction must be a heading index or an angle, got {direction!r}")


@dataclass
class GlobalState:
    """Per-episode long-term memory: cached schema, relative return
    direction, and the ring of the last few executed actions."""

    schema: NavigationSchema
    came_from: int | None = None  # relative heading index, None before first move
    recent_actions: deque = field(
        default_factory=lambda: deque(maxlen=RECENT_ACTION_WINDOW)
    )


def update_global_state(
    state: GlobalState,
    executed_action: Action,
    heading_after: int,
    moved: bool = True,
) -> GlobalState:
    """Fold one executed action into the long-term state (in place).

    Movement with displacement puts the return direction directly behind
    the agent (it ends up facing along its motion). Pure rotations
    re-express the stored relative bearing in the rotated frame. Stop and
    zero-displacement moves leave it untouched.
    """
    kind = executed_action.kind
    if kind in (FORWARD, WAYPOINT):
        if moved:
            state.came_from = HALF_TURN
    elif kind == TURN_LEFT:
        if state.came_from is not None:
            state.came_from = (state.came_from + 1) % HEADING_STEPS
    elif kind == TURN_RIGHT:
        if state.came_from is not None:
            state.came_from = (state.came_from - 1) % HEADING_STEPS
    # STOP: unchanged
    state.recent_actions.append(executed_action)
    return state


def came_from_label(relative: int | None) -> str:
    if relative is None:
        return "none (episode start)"
    return f"{RELATIVE_LABELS[relative]} (relative direction {relative})"


def render_long_term_context(state: GlobalState) -> str:
    """Deterministic textual summary of the long-term memory state."""
    origin = came_from_label(state.came_from)
    recent = (
        ", ".join(a.describe() for a in state.recent_actions)
        if state.recent_actions
        else "none"
    )
    schema = state.schema
    lines = [
        "Long-term memory:",
        f"- came from: {origin}",
        f"- primary direction: {schema.primary_dir}",
        f"- final target: {schema.final_target}",
        f"- navigation pattern: {schema.nav_pattern}",
        f"- recent actions: {recent}",
        (
            f"Please review the direction you came from ({origin}) and check "
            f"if the current direction aligns with the global state, including "
            f"primary direction '{schema.primary_dir}', final target "
            f"'{schema.final_target}', and navigation pattern '{schema.nav_pattern}'."
        ),
    ]
    return "\n".join(lines)
