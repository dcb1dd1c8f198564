"""Discrete action vocabulary shared by the simulator, memory, and policies.

The low-level actions are a fixed quantum forward move (0.25 m), 30-degree
turns on a 12-way heading lattice, stop, and a waypoint move expressed as
(absolute angle in radians, distance in meters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi

FORWARD = "forward"
TURN_LEFT = "turn_left"
TURN_RIGHT = "turn_right"
STOP = "stop"
WAYPOINT = "waypoint"

_SIMPLE_KINDS = (FORWARD, TURN_LEFT, TURN_RIGHT, STOP)


@dataclass(frozen=True)
class Action:
    kind: str
    angle: float | None = None  # radians in [0, 2*pi), waypoint only
    distance: float | None = None  # meters > 0, waypoint only

    def __post_init__(self):
        if self.kind in _SIMPLE_KINDS:
            if self.angle is not None or self.distance is not None:
                raise ValueError(f"{self.kind} takes no angle/distance")
        elif self.kind == WAYPOINT:
            if self.angle is None or self.distance is None:
                raise ValueError("waypoint needs angle and distance")
            if not 0.0 <= self.angle < TWO_PI:
                raise ValueError(f"waypoint angle {self.angle} outside [0, 2*pi)")
            if self.distance <= 0.0:
                raise ValueError(f"waypoint distance {self.distance} must be > 0")
        else:
            raise ValueError(f"unknown action kind {self.kind!r}")

    @property
    def is_movement(self) -> bool:
        return self.kind in (FORWARD, WAYPOINT)

    def describe(self) -> str:
        if self.kind == WAYPOINT:
            return f"waypoint({self.angle:.3f} rad, {self.distance:.2f} m)"
        return self.kind.replace("_", " ")

    def to_json(self) -> dict:
        if self.kind == WAYPOINT:
            return {"kind": self.kind, "angle": self.angle, "distance": self.distance}
        return {"kind": self.kind}

    @classmethod
    def from_json(cls, obj: dict) -> "Action":
        if obj["kind"] == WAYPOINT:
            return cls(WAYPOINT, angle=obj["angle"], distance=obj["distance"])
        return cls(obj["kind"])


forward = Action(FORWARD)
turn_left = Action(TURN_LEFT)
turn_right = Action(TURN_RIGHT)
stop = Action(STOP)


def waypoint(angle: float, distance: float) -> Action:
    return Action(WAYPOINT, angle=angle % TWO_PI, distance=distance)
