"""Deterministic 2D occupancy-grid world.

Cells are 0.25 m squares so one forward move crosses exactly one cell.
Headings live on a 12-way lattice (30-degree steps, index 0 = east,
counterclockwise positive, so index 3 = north). Observations carry 12
per-direction appearance embeddings plus 12 scalar free-distance proxies;
candidate waypoints come from casting rays along all 12 directions.
Movement is 4-connected: a forward move displaces one cell along the
cardinal direction nearest the current heading.
"""

from __future__ import annotations

import base64
import hashlib
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol

import numpy as np

from .actions import (
    Action,
    FORWARD,
    STOP,
    TURN_LEFT,
    TURN_RIGHT,
    TWO_PI,
    WAYPOINT,
)
from .embeddings import normalize, random_unit

CELL_SIZE_M = 0.25
HEADING_STEPS = 12
HEADING_ANGLE = TWO_PI / HEADING_STEPS  # 30 degrees
DEFAULT_DIM = 512
DEFAULT_NOISE_SIGMA = 0.05
DEFAULT_WAYPOINT_CAP_M = 2.0
DEFAULT_MAX_CANDIDATES = 5

MAP_HEADER = "gridworld v1"

# (drow, dcol) displacement for the four cardinal heading indices.
CARDINAL_STEPS = {0: (0, 1), 3: (-1, 0), 6: (0, -1), 9: (1, 0)}

Cell = tuple[int, int]


class WorldParseError(ValueError):
    """Map file rejected; the message names the offending line."""


class EpisodeProtocolError(RuntimeError):
    """An action was issued after the episode terminated."""


def heading_angle(heading: int) -> float:
    return (heading % HEADING_STEPS) * HEADING_ANGLE


def discretize_angle(angle: float) -> int:
    """Nearest heading-lattice index for an absolute angle in radians."""
    return int(round(angle / HEADING_ANGLE)) % HEADING_STEPS


def nearest_cardinal(heading: int) -> int:
    """Cardinal heading index (0/3/6/9) closest to ``heading``."""
    return (3 * round((heading % HEADING_STEPS) / 3)) % HEADING_STEPS


def angular_distance(a: float, b: float) -> float:
    diff = abs(a - b) % TWO_PI
    return min(diff, TWO_PI - diff)


@dataclass(frozen=True)
class AgentPose:
    cell: Cell
    heading: int  # 0..11

    def __post_init__(self):
        if not 0 <= self.heading < HEADING_STEPS:
            raise ValueError(f"heading {self.heading} outside 0..{HEADING_STEPS - 1}")


@dataclass
class GridWorld:
    occupancy: np.ndarray  # bool grid, True = wall
    start_pose: AgentPose
    goal_cell: Cell
    instruction: str
    name: str = "world"
    seed: int | None = None  # defaults to a content hash of the grid

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.ndim != 2:
            raise ValueError("occupancy must be a 2-D grid")
        if not self.is_free(self.start_pose.cell):
            raise ValueError(f"start cell {self.start_pose.cell} is not free")
        if not self.is_free(self.goal_cell):
            raise ValueError(f"goal cell {self.goal_cell} is not free")
        if self.seed is None:
            self.seed = self._content_seed()
        self._distance_fields: dict[Cell, np.ndarray] = {}
        self._shortest_path: list[Cell] | None = None
        goal_steps = self.distance_field(self.goal_cell)[self.start_pose.cell]
        if goal_steps < 0:
            raise ValueError("no free path between start and goal")
        self.shortest_path_length = float(goal_steps) * CELL_SIZE_M

    def _content_seed(self) -> int:
        digest = hashlib.sha256(grid_text(self).encode()).digest()
        return int.from_bytes(digest[:8], "big") & (2**63 - 1)

    @property
    def rows(self) -> int:
        return self.occupancy.shape[0]

    @property
    def cols(self) -> int:
        return self.occupancy.shape[1]

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.rows and 0 <= c < self.cols

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.occupancy[cell]

    def position(self, cell: Cell) -> tuple[float, float]:
        """Cell center in meters; x grows east, y grows north."""
        r, c = cell
        return ((c + 0.5) * CELL_SIZE_M, -(r + 0.5) * CELL_SIZE_M)

    def distance_field(self, source: Cell) -> np.ndarray:
        """Grid-step BFS distances from ``source`` (-1 where unreachable)."""
        cached = self._distance_fields.get(source)
        if cached is not None:
            return cached
        field_ = np.full(self.occupancy.shape, -1, dtype=np.int32)
        if self.is_free(source):
            field_[source] = 0
            frontier = [source]
            while frontier:
                nxt = []
                for r, c in frontier:
                    d = field_[r, c] + 1
                    for dr, dc in CARDINAL_STEPS.values():
                        cell = (r + dr, c + dc)
                        if self.is_free(cell) and field_[cell] < 0:
                            field_[cell] = d
                            nxt.append(cell)
                frontier = nxt
        self._distance_fields[source] = field_
        return field_

    def geodesic_m(self, cell: Cell, goal: Cell | None = None) -> float:
        """Geodesic distance in meters from ``cell`` to the goal; -1 if
        unreachable."""
        goal = goal if goal is not None else self.goal_cell
        steps = int(self.distance_field(goal)[cell])
        return steps * CELL_SIZE_M if steps >= 0 else -1.0

    def shortest_path(self) -> list[Cell]:
        """Deterministic BFS shortest path from start to goal (inclusive)."""
        if self._shortest_path is not None:
            return self._shortest_path
        goal_field = self.distance_field(self.goal_cell)
        cell = self.start_pose.cell
        path = [cell]
        while cell != self.goal_cell:
            d = goal_field[cell]
            for heading in (0, 3, 6, 9):  # fixed order keeps the path unique
                dr, dc = CARDINAL_STEPS[heading]
                nxt = (cell[0] + dr, cell[1] + dc)
                if self.is_free(nxt) and goal_field[nxt] == d - 1:
                    cell = nxt
                    break
            else:
                raise RuntimeError("BFS field inconsistent with occupancy")
            path.append(cell)
        self._shortest_path = path
        return path


def grid_text(world: GridWorld) -> str:
    """The map body (grid rows only), used for content hashing."""
    rows = []
    for r in range(world.rows):
        row = []
        for c in range(world.cols):
            if (r, c) == world.start_pose.cell:
                row.append("S")
            elif (r, c) == world.goal_cell:
                row.append("G")
            elif world.occupancy[r, c]:
                row.append("#")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows)


def serialize_map(world: GridWorld) -> str:
    header = f"{MAP_HEADER} {world.rows} {world.cols} {world.start_pose.heading}"
    return f"{header}\n{grid_text(world)}\ninstr: {world.instruction}\n"


def parse_map(text: str, name: str = "world") -> GridWorld:
    """Parse the plain-text map format; errors name the offending line."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise WorldParseError("line 1: empty map file")
    header = lines[0].split()
    if len(header) != 5 or " ".join(header[:2]) != MAP_HEADER:
        raise WorldParseError(f"line 1: expected '{MAP_HEADER} <rows> <cols> <heading>'")
    try:
        rows, cols, heading = int(header[2]), int(header[3]), int(header[4])
    except ValueError:
        raise WorldParseError("line 1: rows/cols/heading must be integers")
    if not 0 <= heading < HEADING_STEPS:
        raise WorldParseError(f"line 1: heading {heading} outside 0..{HEADING_STEPS - 1}")
    if len(lines) < 1 + rows + 1:
        raise WorldParseError(f"line {len(lines)}: expected {rows} grid rows plus an instr line")
    occupancy = np.zeros((rows, cols), dtype=bool)
    start = None
    goal = None
    for r in range(rows):
        line_no = 2 + r
        row = lines[1 + r]
        if len(row) != cols:
            raise WorldParseError(f"line {line_no}: expected {cols} cells, got {len(row)}")
        for c, ch in enumerate(row):
            if ch == "#":
                occupancy[r, c] = True
            elif ch == "S":
                if start is not None:
                    raise WorldParseError(f"line {line_no}: duplicate start cell")
                start = (r, c)
            elif ch == "G":
                if goal is not None:
                    raise WorldParseError(f"line {line_no}: duplicate goal cell")
                goal = (r, c)
            elif ch != ".":
                raise WorldParseError(f"line {line_no}: invalid cell character {ch!r}")
    instr_no = 2 + rows
    instr_line = lines[1 + rows]
    if not instr_line.startswith("instr:"):
        raise WorldParseError(f"line {instr_no}: expected 'instr: <instruction>'")
    instruction = instr_line[len("instr:"):]
    if instruction.startswith(" "):
        instruction = instruction[1:]
    if start is None:
        raise WorldParseError("line 1: map has no start cell 'S'")
    if goal is None:
        raise WorldParseError("line 1: map has no goal cell 'G'")
    try:
        return GridWorld(
            occupancy=occupancy,
            start_pose=AgentPose(cell=start, heading=heading),
            goal_cell=goal,
            instruction=instruction,
            name=name,
        )
    except ValueError as exc:
        raise WorldParseError(f"line 1: {exc}") from exc


def load_map(path) -> GridWorld:
    from pathlib import Path

    p = Path(path)
    return parse_map(p.read_text(), name=p.stem)


def ray_free_cells(world: GridWorld, cell: Cell, direction: int, limit: int = 4096) -> int:
    """Contiguous free cells along the ray from the cell center, excluding
    the start cell. Grid traversal follows the exact ray geometry, so
    non-cardinal rays pass through the off-axis cells they cross."""
    theta = heading_angle(direction)
    vc = math.cos(theta)
    vr = -math.sin(theta)  # row grows southward
    r, c = cell
    # Parametric distances (in cell units) to the next row/col boundary.
    if vr > 1e-12:
        t_max_r, t_delta_r, step_r = 0.5 / vr, 1.0 / vr, 1
    elif vr < -1e-12:
        t_max_r, t_delta_r, step_r = 0.5 / -vr, 1.0 / -vr, -1
    else:
        t_max_r, t_delta_r, step_r = math.inf, math.inf, 0
    if vc > 1e-12:
        t_max_c, t_delta_c, step_c = 0.5 / vc, 1.0 / vc, 1
    elif vc < -1e-12:
        t_max_c, t_delta_c, step_c = 0.5 / -vc, 1.0 / -vc, -1
    else:
        t_max_c, t_delta_c, step_c = math.inf, math.inf, 0
    count = 0
    while count < limit:
        if t_max_r < t_max_c:
            r += step_r
            t_max_r += t_delta_r
        else:
            c += step_c
            t_max_c += t_delta_c
        if not world.is_free((r, c)):
            break
        count += 1
    return count


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, world: GridWorld, cell: Cell, direction: int) -> np.ndarray:
        ...


@lru_cache(maxsize=262144)
def _base_vector(world_seed: int, row: int, col: int, direction: int, dim: int) -> np.ndarray:
    seq = np.random.SeedSequence([world_seed, row, col, direction, dim])
    return random_unit(np.random.default_rng(seq), dim)


def _place_vector(
    world_seed: int, cell: Cell, direction: int, dim: int, correlation: float,
    rows: int, cols: int,
) -> np.ndarray:
    r, c = cell
    base = _base_vector(world_seed, r, c, direction, dim)
    if correlation <= 0.0:
        return base
    blended = (1.0 - correlation) * base
    for dr, dc in CARDINAL_STEPS.values():
        nr, nc = r + dr, c + dc
        if 0 <= nr < rows and 0 <= nc < cols:
            blended = blended + (correlation / 4.0) * _base_vector(
                world_seed, nr, nc, direction, dim
            )
    return normalize(blended)


def synth_embedding(
    world: GridWorld,
    cell: Cell,
    direction: int,
    noise_sigma: float,
    seed: int,
    dim: int = DEFAULT_DIM,
    correlation: float = 0.0,
) -> np.ndarray:
    """Synthetic stand-in for a frozen image encoder.

    The base direction-of-view vector depends only on (world seed, cell,
    direction), so revisits of the same place reproduce the same signal;
    ``noise_sigma`` is the magnitude of a per-call random perturbation
    (a unit direction scaled by sigma) drawn from ``seed``.
    """
    if not world.is_free(cell):
        raise ValueError(f"cell {cell} is not free")
    base = _place_vector(
        world.seed, cell, direction, dim, correlation, world.rows, world.cols
    )
    if noise_sigma == 0.0:
        return base.copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    return normalize(base + noise_sigma * random_unit(rng, dim))


class SyntheticEmbeddingProvider:
    """Deterministic per-episode embedding source (see synth_embedding)."""

    def __init__(
        self,
        dim: int = DEFAULT_DIM,
        noise_sigma: float = DEFAULT_NOISE_SIGMA,
        correlation: float = 0.0,
        seed: int = 0,
    ):
        self.dim = dim
        self.noise_sigma = noise_sigma
        self.correlation = correlation
        self._rng = np.random.default_rng(np.random.SeedSequence([seed]))

    def embed(self, world: GridWorld, cell: Cell, direction: int) -> np.ndarray:
        if not world.is_free(cell):
            raise ValueError(f"cell {cell} is not free")
        base = _place_vector(
            world.seed, cell, direction, self.dim, self.correlation,
            world.rows, world.cols,
        )
        if self.noise_sigma == 0.0:
            return base.copy()
        return normalize(base + self.noise_sigma * random_unit(self._rng, self.dim))


class SidecarEmbeddingProvider:
    """Embedding source backed by the HTTP sidecar's /embed endpoint.

    Each (cell, direction) is rendered as a small deterministic byte
    pattern standing in for an image, so the contract (base64 images in,
    unit vectors out) is exercised end to end.
    """

    def __init__(self, client, dim: int = DEFAULT_DIM):
        self.client = client
        self.dim = dim

    @staticmethod
    def _fake_image(world: GridWorld, cell: Cell, direction: int) -> str:
        payload = struct.pack(">qhhh", world.seed, cell[0], cell[1], direction) * 32
        return base64.b64encode(payload).decode("ascii")

    def embed(self, world: GridWorld, cell: Cell, direction: int) -> np.ndarray:
        vectors = self.client.embed(
            [self._fake_image(world, cell, direction)], target_dim=self.dim
        )
        return normalize(np.asarray(vectors[0], dtype=np.float64))


@dataclass
class Observation:
    view_embeddings: list[np.ndarray]  # 12 unit vectors, absolute directions
    depth_proxies: list[float]  # 12 free distances in meters

    def __post_init__(self):
        if len(self.view_embeddings) != HEADING_STEPS:
            raise ValueError("expected 12 view embeddings")
        if len(self.depth_proxies) != HEADING_STEPS:
            raise ValueError("expected 12 depth proxies")


def observe(world: GridWorld, pose: AgentPose, provider: EmbeddingProvider) -> Observation:
    """Panoramic observation at the pose: one embedding and one scalar
    free distance per direction. Provider failures propagate."""
    if not world.is_free(pose.cell):
        raise ValueError(f"pose cell {pose.cell} is not free")
    views = [provider.embed(world, pose.cell, d) for d in range(HEADING_STEPS)]
    depths = [
        ray_free_cells(world, pose.cell, d) * CELL_SIZE_M for d in range(HEADING_STEPS)
    ]
    return Observation(view_embeddings=views, depth_proxies=depths)


@dataclass(frozen=True)
class CandidateWaypoint:
    angle: float  # absolute, radians in [0, 2*pi)
    distance: float  # meters > 0
    direction_index: int  # 0..11

    def to_json(self) -> dict:
        return {
            "angle": self.angle,
            "distance": self.distance,
            "direction": self.direction_index,
        }


def candidate_waypoints(
    world: GridWorld,
    pose: AgentPose,
    cap_m: float = DEFAULT_WAYPOINT_CAP_M,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
) -> list[CandidateWaypoint]:
    """Geometric candidate generation: rays along all 12 directions, kept
    when they have clearance (one free cell for cardinal rays, two for
    off-cardinal rays, whose first cells would otherwise hug a corner),
    capped in distance, ranked by free distance then by angular closeness
    to the current heading. Empty when nothing is navigable."""
    heading_theta = heading_angle(pose.heading)
    found = []
    for d in range(HEADING_STEPS):
        free = ray_free_cells(world, pose.cell, d)
        required = 1 if d % 3 == 0 else 2
        if free < required:
            continue
        distance = min(free * CELL_SIZE_M, cap_m)
        angle = heading_angle(d)
        found.append(
            (
                -distance,
                angular_distance(angle, heading_theta),
                d,
                CandidateWaypoint(angle=angle, distance=distance, direction_index=d),
            )
        )
    found.sort(key=lambda item: item[:3])
    return [item[3] for item in found[:max_candidates]]


def _forward_cell(world: GridWorld, cell: Cell, heading: int) -> Cell | None:
    dr, dc = CARDINAL_STEPS[nearest_cardinal(heading)]
    target = (cell[0] + dr, cell[1] + dc)
    return target if world.is_free(target) else None


def step(world: GridWorld, pose: AgentPose, action: Action) -> tuple[AgentPose, float, bool]:
    """Execute one action; returns (new pose, distance moved in m, blocked).

    Forward moves one cell along the cardinal direction nearest the
    heading; turns rotate one lattice step; a waypoint move rotates to the
    nearest lattice heading then repeats forward moves, stopping early
    when blocked. Stop is a no-op here (termination is the runner's job).
    """
    if not world.is_free(pose.cell):
        raise ValueError(f"pose cell {pose.cell} is not free")
    kind = action.kind
    if kind == FORWARD:
        target = _forward_cell(world, pose.cell, pose.heading)
        if target is None:
            return pose, 0.0, True
        return AgentPose(cell=target, heading=pose.heading), CELL_SIZE_M, False
    if kind == TURN_LEFT:
        return AgentPose(cell=pose.cell, heading=(pose.heading + 1) % HEADING_STEPS), 0.0, False
    if kind == TURN_RIGHT:
        return AgentPose(cell=pose.cell, heading=(pose.heading - 1) % HEADING_STEPS), 0.0, False
    if kind == STOP:
        return pose, 0.0, False
    if kind == WAYPOINT:
        heading = discretize_angle(action.angle)
        substeps = int(round(action.distance / CELL_SIZE_M))
        cell = pose.cell
        moved = 0
        for _ in range(substeps):
            target = _forward_cell(world, cell, heading)
            if target is None:
                break
            cell = target
            moved += 1
        return (
            AgentPose(cell=cell, heading=heading),
            moved * CELL_SIZE_M,
            moved < substeps,
        )
    raise ValueError(f"unknown action kind {kind!r}")
