"""Per-step decision making.

Assembles the navigation prompt (instruction, observation summary,
long-term injection, short-term injection, in that fixed order) and
selects an action either with a deterministic scripted policy or by
delegating to a remote model sidecar over HTTP.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import requests

from .actions import Action, stop as stop_action, waypoint
from .globaler import HEADING_STEPS, NavigationSchema
from .memory import CandidatePriority
from .world import CandidateWaypoint, angular_distance, heading_angle

DEFAULT_SIDECAR_TIMEOUT_S = 30.0
REMOTE_RETRY_BUDGET = 2

# Scripted-policy step quantum: advance one cell per decision so stopping
# is precise and the graph memory localizes at every cell along the way.
SCRIPTED_STEP_M = 0.25

_CANDIDATE_RE = re.compile(r"candidate\s*[:#]?\s*(\d+)", re.IGNORECASE)
_STOP_RE = re.compile(r"\bstop\b", re.IGNORECASE)

# Relative-bearing targets for primary-direction tokens (clockwise steps
# from the nose; 0 = keep heading).
_PRIMARY_DIR_TARGETS = {
    "straight/forward": 0,
    "left": 9,
    "right": 3,
    "around": 6,
}

_ALIGN_WEIGHT = 1.0
_BACKTRACK_WEIGHT = 0.75


@dataclass
class DecisionContext:
    instruction: str
    step: int
    candidate_summaries: list[str]
    short_term_context: str
    long_term_context: str
    # Structured carriers for the scripted policies (never rendered into
    # the prompt unless noted): ranked (waypoint, priority) pairs, the
    # current heading, the goal-proximity flag (scripted only), and the
    # long-term state when the globaler is enabled.
    ranked_candidates: list[tuple[CandidateWaypoint, CandidatePriority]] = field(
        default_factory=list
    )
    heading: int = 0
    goal_proximity: bool | None = None
    schema: NavigationSchema | None = None
    came_from: int | None = None

    def prompt(self) -> str:
        lines = [f"Instruction: {self.instruction}", f"Step: {self.step}"]
        lines.append("Observation summary:")
        if self.candidate_summaries:
            lines.extend(f"  {summary}" for summary in self.candidate_summaries)
        else:
            lines.append("  no navigable candidates")
        lines.append("Long-term memory:")
        lines.append(self.long_term_context if self.long_term_context else "  (disabled)")
        lines.append("Short-term memory:")
        lines.append(self.short_term_context if self.short_term_context else "  (disabled)")
        return "\n".join(lines)


@dataclass
class Decision:
    action: Action
    chosen_candidate: int | None = None
    rationale: str = ""
    fallback: bool = False
    retries: int = 0


def build_context(
    instruction: str,
    step: int,
    candidates: list[CandidateWaypoint],
    priorities: list[CandidatePriority],
    short_term_context: str,
    long_term_context: str,
    heading: int = 0,
    goal_proximity: bool | None = None,
    schema: NavigationSchema | None = None,
    came_from: int | None = None,
) -> DecisionContext:
    """Deterministic context assembly; candidates are listed in rank order."""
    if len(candidates) != len(priorities):
        raise ValueError("candidates and priorities must be the same length")
    by_rank = sorted(priorities, key=lambda p: p.rank)
    ranked = [(candidates[p.candidate_index], p) for p in by_rank]
    summaries = [
        (
            f"candidate {p.candidate_index}: angle {c.angle:.3f} rad, "
            f"distance {c.distance:.2f} m, novelty {p.novelty:.3f}, rank {p.rank}"
        )
        for c, p in ranked
    ]
    return DecisionContext(
        instruction=instruction,
        step=step,
        candidate_summaries=summaries,
        short_term_context=short_term_context,
        long_term_context=long_term_context,
        ranked_candidates=ranked,
        heading=heading,
        goal_proximity=goal_proximity,
        schema=schema,
        came_from=came_from,
    )


def _relative_index(heading: int, direction_index: int) -> int:
    """Clockwise lattice steps from the nose to an absolute direction."""
    return (heading - direction_index) % HEADING_STEPS


def _lattice_distance(a: int, b: int) -> int:
    diff = abs(a - b) % HEADING_STEPS
    return min(diff, HEADING_STEPS - diff)


def _steering_score(
    candidate: CandidateWaypoint,
    heading: int,
    schema: NavigationSchema,
    came_from: int | None,
) -> float:
    """Long-term steering: before the first move, align with the
    instruction's primary direction; afterwards prefer keeping the heading
    while avoiding the direction the agent came from."""
    rel = _relative_index(heading, candidate.direction_index)
    if came_from is None:
        target = _PRIMARY_DIR_TARGETS.get(schema.primary_dir, 0)
        return _ALIGN_WEIGHT * (6 - _lattice_distance(rel, target)) / 6.0
    align = _ALIGN_WEIGHT * (6 - _lattice_distance(rel, 0)) / 6.0
    backtrack = _BACKTRACK_WEIGHT * (6 - _lattice_distance(rel, came_from)) / 6.0
    return align - backtrack


def scripted_decide(
    context: DecisionContext, oracle_hint: float | None = None
) -> Decision:
    """Deterministic policy stand-in for the model-backed navigator.

    Stops on the goal-proximity flag or when nothing is navigable.
    With a goal-bearing hint it picks the candidate closest in angle to
    the hint (ties by priority rank). Without a hint it explores: by
    priority rank, steered by the long-term state when one is present.
    """
    if context.goal_proximity:
        return Decision(action=stop_action)
    if not context.ranked_candidates:
        return Decision(action=stop_action)
    if oracle_hint is not None:
        chosen = min(
            context.ranked_candidates,
            key=lambda cp: (angular_distance(cp[0].angle, oracle_hint), cp[1].rank),
        )
    elif context.schema is not None:
        chosen = min(
            context.ranked_candidates,
            key=lambda cp: (
                -_steering_score(cp[0], context.heading, context.schema, context.came_from),
                cp[1].rank,
                cp[1].candidate_index,
            ),
        )
    else:
        chosen = context.ranked_candidates[0]
    candidate, priority = chosen
    return Decision(
        action=waypoint(candidate.angle, min(candidate.distance, SCRIPTED_STEP_M)),
        chosen_candidate=priority.candidate_index,
    )


class SidecarError(RuntimeError):
    """Transport or protocol failure talking to the model sidecar."""


class SidecarClient:
    """Thin HTTP/JSON client for the model sidecar."""

    def __init__(self, base_url: str, timeout: float = DEFAULT_SIDECAR_TIMEOUT_S):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = self._session.post(
                f"{self.base_url}{path}", json=payload, timeout=self.timeout
            )
            response.raise_for_status()
            return response.json()
        except (requests.RequestException, ValueError) as exc:
            raise SidecarError(f"sidecar request {path} failed: {exc}") from exc

    def embed(self, images: list[str], target_dim: int) -> list[list[float]]:
        body = self._post("/embed", {"images": images, "target_dim": target_dim})
        return body["embeddings"]

    def schema(self, instruction: str) -> NavigationSchema:
        body = self._post("/schema", {"instruction": instruction})
        return NavigationSchema(
            primary_dir=body["primary_dir"],
            final_target=body["final_target"],
            nav_pattern=body["nav_pattern"],
        )

    def decide(self, prompt: str, candidates: list[dict]) -> dict:
        return self._post("/decide", {"prompt": prompt, "candidates": candidates})

    def healthz(self) -> dict:
        try:
            response = self._session.get(
                f"{self.base_url}/healthz", timeout=self.timeout
            )
            response.raise_for_status()
            return response.json()
        except (requests.RequestException, ValueError) as exc:
            raise SidecarError(f"sidecar health check failed: {exc}") from exc


def parse_action_token(text: str, candidate_indices: set[int]) -> tuple[str, int | None] | None:
    """Parse the wire action grammar: 'candidate: <i>' or 'stop',
    case-insensitive, first match (by position) wins. None if unparseable."""
    candidate_match = _CANDIDATE_RE.search(text)
    stop_match = _STOP_RE.search(text)
    if candidate_match and (not stop_match or candidate_match.start() < stop_match.start()):
        index = int(candidate_match.group(1))
        if index in candidate_indices:
            return ("candidate", index)
        return None
    if stop_match:
        return ("stop", None)
    return None


def remote_decide(context: DecisionContext, client: SidecarClient) -> Decision:
    """Delegate the decision to the sidecar, with a bounded retry on
    malformed or failed responses and a scripted fallback after that.
    Never raises; episodes always keep a total decision path."""
    wire_candidates = [
        {
            "index": p.candidate_index,
            "angle_rad": c.angle,
            "distance_m": c.distance,
        }
        for c, p in context.ranked_candidates
    ]
    indices = {c["index"] for c in wire_candidates}
    prompt = context.prompt()
    last_error = ""
    for attempt in range(1 + REMOTE_RETRY_BUDGET):
        try:
            body = client.decide(prompt, wire_candidates)
            action_text = str(body.get("action", ""))
            rationale = str(body.get("rationale", ""))
        except SidecarError as exc:
            last_error = str(exc)
            continue
        parsed = parse_action_token(action_text, indices)
        if parsed is None:
            last_error = f"unparseable action {action_text!r}"
            continue
        kind, index = parsed
        if kind == "stop":
            return Decision(action=stop_action, rationale=rationale, retries=attempt)
        chosen = next(
            (c, p) for c, p in context.ranked_candidates if p.candidate_index == index
        )
        return Decision(
            action=waypoint(chosen[0].angle, chosen[0].distance),
            chosen_candidate=index,
            rationale=rationale,
            retries=attempt,
        )
    fallback = scripted_decide(context)
    fallback.fallback = True
    fallback.retries = REMOTE_RETRY_BUDGET
    fallback.rationale = f"sidecar fallback: {last_error}"
    return fallback


def goal_bearing_hint(world, pose) -> float | None:
    """Oracle goal bearing: the direction of geodesic descent toward the
    goal from the current cell (straight-line bearings dead-end in mazes)."""
    field = world.distance_field(world.goal_cell)
    here = field[pose.cell]
    if here <= 0:
        return None
    from .world import CARDINAL_STEPS

    for heading in (0, 3, 6, 9):
        dr, dc = CARDINAL_STEPS[heading]
        cell = (pose.cell[0] + dr, pose.cell[1] + dc)
        if world.is_free(cell) and field[cell] == here - 1:
            return heading_angle(heading)
    return None
