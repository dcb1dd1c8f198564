"""Deterministic maze worlds for benchmark suites.

Perfect mazes are carved with a randomized depth-first backtracker on the
odd-coordinate lattice; start and goal sit at a maximal-geodesic pair
(double BFS), and a template instruction is synthesized from the turn
sequence of the shortest path so the rule-based schema extractor has real
material to work with.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .world import AgentPose, CARDINAL_STEPS, GridWorld, serialize_map

_TURN_WORDS = {3: "turn left", 9: "turn right", 6: "turn around"}


def carve_maze(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Perfect maze occupancy grid (True = wall) on odd dimensions."""
    if rows < 3 or cols < 3:
        raise ValueError("maze dimensions must be at least 3x3")
    rows = rows if rows % 2 == 1 else rows - 1
    cols = cols if cols % 2 == 1 else cols - 1
    occupancy = np.ones((rows, cols), dtype=bool)
    start = (1, 1)
    occupancy[start] = False
    stack = [start]
    while stack:
        r, c = stack[-1]
        neighbors = []
        for dr, dc in ((0, 2), (0, -2), (2, 0), (-2, 0)):
            nr, nc = r + dr, c + dc
            if 0 < nr < rows and 0 < nc < cols and occupancy[nr, nc]:
                neighbors.append((nr, nc))
        if not neighbors:
            stack.pop()
            continue
        nr, nc = neighbors[int(rng.integers(len(neighbors)))]
        occupancy[(r + nr) // 2, (c + nc) // 2] = False
        occupancy[nr, nc] = False
        stack.append((nr, nc))
    return occupancy


def _farthest_cell(occupancy: np.ndarray, source) -> tuple[tuple[int, int], np.ndarray]:
    rows, cols = occupancy.shape
    field = np.full(occupancy.shape, -1, dtype=np.int32)
    field[source] = 0
    frontier = [source]
    best = source
    while frontier:
        nxt = []
        for r, c in frontier:
            d = field[r, c] + 1
            for dr, dc in CARDINAL_STEPS.values():
                nr, nc = r + dr, c + dc
                if 0 <= nr < rows and 0 <= nc < cols and not occupancy[nr, nc] and field[nr, nc] < 0:
                    field[nr, nc] = d
                    nxt.append((nr, nc))
                    if d > field[best]:
                        best = (nr, nc)
        frontier = nxt
    return best, field


def _path_headings(path) -> list[int]:
    headings = []
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        delta = (r1 - r0, c1 - c0)
        for heading, step_ in CARDINAL_STEPS.items():
            if step_ == delta:
                headings.append(heading)
                break
    return headings


def path_instruction(path) -> str:
    """Template instruction from the path's run/turn structure."""
    headings = _path_headings(path)
    if not headings:
        return "Stay where you are, and stop at the goal marker."
    segments = []  # (heading, run length)
    for heading in headings:
        if segments and segments[-1][0] == heading:
            segments[-1][1] += 1
        else:
            segments.append([heading, 1])
    parts = [f"walk forward {segments[0][1]} steps"]
    for (prev, _), (cur, run) in zip(segments, segments[1:]):
        parts.append(_TURN_WORDS[(cur - prev) % 12])
        parts.append(f"walk forward {run} steps")
    body = ", ".join(parts)
    sentence = body[0].upper() + body[1:]
    return f"{sentence}, and stop at the goal marker."


def generate_maze_world(rows: int, cols: int, seed: int, name: str = "maze") -> GridWorld:
    """One deterministic maze world: carved grid, diameter start/goal
    pair, start heading along the first path step, synthesized instruction."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    occupancy = carve_maze(rows, cols, rng)
    anchor = (1, 1)
    start, _ = _farthest_cell(occupancy, anchor)
    goal, field = _farthest_cell(occupancy, start)

    # Reconstruct the BFS path start -> goal for heading and instruction.
    path = [goal]
    cell = goal
    while cell != start:
        d = field[cell]
        for heading in (0, 3, 6, 9):
            dr, dc = CARDINAL_STEPS[heading]
            nxt = (cell[0] + dr, cell[1] + dc)
            if (
                0 <= nxt[0] < occupancy.shape[0]
                and 0 <= nxt[1] < occupancy.shape[1]
                and not occupancy[nxt]
                and field[nxt] == d - 1
            ):
                cell = nxt
                break
        path.append(cell)
    path.reverse()
    headings = _path_headings(path)
    start_heading = headings[0] if headings else 0
    return GridWorld(
        occupancy=occupancy,
        start_pose=AgentPose(cell=start, heading=start_heading),
        goal_cell=goal,
        instruction=path_instruction(path),
        name=name,
    )


def generate_mazes(
    count: int, rows: int, cols: int, seed: int, out_dir
) -> list[Path]:
    """Write ``count`` maze map files; fully determined by the seed."""
    if count < 1:
        raise ValueError("maze count must be at least 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        world = generate_maze_world(rows, cols, seed=seed * 100003 + i, name=f"maze{i:03d}")
        path = out / f"maze{i:03d}.map"
        path.write_text(serialize_map(world))
        paths.append(path)
    return paths
