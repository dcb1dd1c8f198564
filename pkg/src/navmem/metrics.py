"""Trajectory evaluation: TL, NE, SR, OSR, SPL, and nDTW.

Geodesics are 4-connected grid BFS distances scaled by the cell size.
nDTW uses the standard normalization exp(-DTW / (|reference| * radius))
with Euclidean point costs, the radius being the success radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import CELL_SIZE_M, Cell, GridWorld

DEFAULT_SUCCESS_RADIUS_M = 3.0

METRIC_COLUMNS = ("TL", "NE", "nDTW", "OSR", "SR", "SPL")


@dataclass
class Trajectory:
    points: list[tuple[float, float]]  # cell centers, meters
    stopped: bool


@dataclass
class EpisodeMetrics:
    tl: float
    ne: float
    sr: int
    osr: int
    spl: float
    ndtw: float
    ne_unreachable: bool = False

    def __post_init__(self):
        if self.spl > self.sr + 1e-12:
            raise ValueError("spl cannot exceed sr")
        if self.osr < self.sr:
            raise ValueError("osr cannot be below sr")

    def to_json(self) -> dict:
        return {
            "tl": self.tl,
            "ne": self.ne,
            "sr": self.sr,
            "osr": self.osr,
            "spl": self.spl,
            "ndtw": self.ndtw,
            "ne_unreachable": self.ne_unreachable,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EpisodeMetrics":
        return cls(**obj)


def point_cell(point: tuple[float, float]) -> Cell:
    x, y = point
    return (int(round(-y / CELL_SIZE_M - 0.5)), int(round(x / CELL_SIZE_M - 0.5)))


def navigation_error(
    traj: Trajectory, goal: Cell, world: GridWorld
) -> tuple[float, bool]:
    """Geodesic distance in meters from the trajectory end to the goal.

    Returns (meters, unreachable); when no free path exists the straight
    line distance is reported with the flag set.
    """
    if not traj.points:
        raise ValueError("trajectory is empty")
    final = traj.points[-1]
    geodesic = world.geodesic_m(point_cell(final), goal)
    if geodesic >= 0.0:
        return geodesic, False
    gx, gy = world.position(goal)
    return math.hypot(final[0] - gx, final[1] - gy), True


def success(ne: float, radius: float = DEFAULT_SUCCESS_RADIUS_M) -> int:
    """1 iff the navigation error is within the radius (inclusive)."""
    if ne < 0:
        raise ValueError("navigation error cannot be negative")
    return int(ne <= radius)


def oracle_success(
    traj: Trajectory, goal: Cell, radius: float, world: GridWorld
) -> int:
    """1 iff any trajectory point comes within the radius of the goal."""
    field = world.distance_field(goal)
    for point in traj.points:
        steps = int(field[point_cell(point)])
        if steps >= 0 and steps * CELL_SIZE_M <= radius:
            return 1
    return 0


def spl(sr: int, shortest: float, tl: float) -> float:
    """Success weighted by path length: sr * shortest / max(tl, shortest)."""
    if shortest <= 0:
        raise ValueError("shortest path length must be positive")
    return sr * shortest / max(tl, shortest)


def dtw_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Dynamic time warping under Euclidean point cost (standard DP)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("both paths must be non-empty")
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, m + 1):
            row[j] = cost[i - 1, j - 1] + min(prev[j], row[j - 1], prev[j - 1])
    return float(acc[n, m])


def ndtw(
    traj_points, reference_points, radius: float = DEFAULT_SUCCESS_RADIUS_M
) -> float:
    """exp(-DTW(traj, reference) / (|reference| * radius)), in (0, 1]."""
    if radius <= 0:
        raise ValueError("ndtw radius must be positive")
    reference = np.asarray(reference_points, dtype=np.float64)
    value = dtw_distance(np.asarray(traj_points, dtype=np.float64), reference)
    return math.exp(-value / (len(reference) * radius))


def compute_episode_metrics(
    traj: Trajectory,
    world: GridWorld,
    tl: float,
    radius: float = DEFAULT_SUCCESS_RADIUS_M,
) -> EpisodeMetrics:
    """Assemble all six metrics for one episode.

    ``tl`` is the exact sum of per-step distances reported by the
    simulator; the reference path for nDTW is the world's BFS shortest
    path between start and goal.
    """
    ne, unreachable = navigation_error(traj, world.goal_cell, world)
    sr = success(ne, radius)
    osr = max(oracle_success(traj, world.goal_cell, radius, world), sr)
    reference = [world.position(cell) for cell in world.shortest_path()]
    # nDTW keeps the standard scale constant even when the stopping radius
    # is configured to zero (exact-goal profiles).
    ndtw_radius = radius if radius > 0 else DEFAULT_SUCCESS_RADIUS_M
    return EpisodeMetrics(
        tl=tl,
        ne=ne,
        sr=sr,
        osr=osr,
        spl=spl(sr, world.shortest_path_length, tl) if world.shortest_path_length > 0 else float(sr),
        ndtw=ndtw(traj.points, reference, ndtw_radius),
        ne_unreachable=unreachable,
    )


def aggregate_metrics(rows: list[EpisodeMetrics]) -> dict[str, float]:
    if not rows:
        raise ValueError("cannot aggregate an empty metric list")
    n = len(rows)
    return {
        "TL": sum(r.tl for r in rows) / n,
        "NE": sum(r.ne for r in rows) / n,
        "nDTW": 100.0 * sum(r.ndtw for r in rows) / n,
        "OSR": 100.0 * sum(r.osr for r in rows) / n,
        "SR": 100.0 * sum(r.sr for r in rows) / n,
        "SPL": 100.0 * sum(r.spl for r in rows) / n,
    }


def _format_row(label: str, values) -> str:
    tl, ne, ndtw_, osr, sr, spl_ = values
    return (
        f"{label:<24} {tl:>8.2f} {ne:>8.2f} {ndtw_:>8.2f} "
        f"{osr:>8.1f} {sr:>8.1f} {spl_:>8.2f}"
    )


def format_report(episode_rows: list[tuple[str, EpisodeMetrics]]) -> str:
    """Plain-text report: one row per episode plus the mean row.

    nDTW/OSR/SR/SPL are percentages; TL and NE are meters.
    """
    header = (
        f"{'episode':<24} {'TL':>8} {'NE':>8} {'nDTW':>8} {'OSR':>8} {'SR':>8} {'SPL':>8}"
    )
    lines = [header]
    for label, m in episode_rows:
        lines.append(
            _format_row(
                label,
                (m.tl, m.ne, 100.0 * m.ndtw, 100.0 * m.osr, 100.0 * m.sr, 100.0 * m.spl),
            )
        )
    means = aggregate_metrics([m for _, m in episode_rows])
    lines.append(
        _format_row(
            "mean",
            (means["TL"], means["NE"], means["nDTW"], means["OSR"], means["SR"], means["SPL"]),
        )
    )
    return "\n".join(lines)
