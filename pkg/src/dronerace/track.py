"""Race-track geometry, gate-passage/collision detection, and the race reward.

A track is an ordered cycle of square gates hanging in the world (NED
frame; the ground plane sits at ``z >= ground_z``). Each gate has a center,
a yaw giving the forward pass direction (the horizontal normal of its
plane), and a half size (0.5 m for the standard 1 m x 1 m gate).

Per step, the drone's motion segment p_prev -> p_curr is tested against the
current target gate:

* crossing the gate plane in the forward-normal direction inside the square
  boundary is a pass;
* crossing the plane outside the boundary (either direction) or touching
  the ground is a collision;
* crossing the plane backward inside the boundary is ignored, so a pass
  cannot be farmed by shuttling back and forth.

The reward is +10 - 10 * (distance of crossing point from gate center) on a
pass, -10 on collision, and otherwise the per-step reduction in distance to
the target gate center (positive when approaching).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

EVENT_NONE = 0
EVENT_GATE_PASSED = 1
EVENT_COLLISION = 2

_EVENT_NAMES = {EVENT_NONE: "none", EVENT_GATE_PASSED: "gate_passed",
                EVENT_COLLISION: "collision"}

GATE_REWARD = 10.0
COLLISION_PENALTY = -10.0


@dataclass
class Gate:
    """Square gate: center, yaw of the pass-plane normal, half side length."""

    center: np.ndarray
    yaw: float
    half_size: float = 0.5

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.yaw = float(self.yaw)
        if self.half_size <= 0:
            raise ValueError("half_size must be > 0")

    @property
    def normal(self) -> np.ndarray:
        """Horizontal unit normal of the pass plane (forward direction)."""
        return np.array([np.cos(self.yaw), np.sin(self.yaw), 0.0])

    @property
    def lateral(self) -> np.ndarray:
        """In-plane horizontal unit vector (side offset axis)."""
        return np.array([-np.sin(self.yaw), np.cos(self.yaw), 0.0])


@dataclass
class Track:
    """Ordered gate cycle plus start point and ground level."""

    gates: list[Gate]
    start: np.ndarray
    ground_z: float = 0.0

    def __post_init__(self):
        if not self.gates:
            raise ValueError("track needs at least one gate")
        self.start = np.asarray(self.start, dtype=float).reshape(3)

    @property
    def n_gates(self) -> int:
        return len(self.gates)

    # Stacked per-gate arrays for vectorized lookups.
    def gate_arrays(self):
        centers = np.stack([g.center for g in self.gates])
        yaws = np.array([g.yaw for g in self.gates])
        normals = np.stack([g.normal for g in self.gates])
        laterals = np.stack([g.lateral for g in self.gates])
        halves = np.array([g.half_size for g in self.gates])
        return centers, yaws, normals, laterals, halves

    @classmethod
    def canonical(cls) -> "Track":
        """Four 1x1 m gates on the corners of a 4x3 m rectangle at 1.5 m
        altitude, yaws stepping 90 deg for counter-clockwise circulation,
        start 1 m before gate 1 on its approach axis."""
        z = -1.5
        gates = [
            Gate(np.array([2.0, -1.5, z]), 0.0),
            Gate(np.array([2.0, 1.5, z]), np.pi / 2),
            Gate(np.array([-2.0, 1.5, z]), np.pi),
            Gate(np.array([-2.0, -1.5, z]), 3 * np.pi / 2),
        ]
        return cls(gates, np.array([1.0, -1.5, z]), 0.0)

    def save(self, path) -> None:
        doc = {
            "start": [float(v) for v in self.start],
            "ground_z": float(self.ground_z),
            "gates": [
                {
                    "center": [float(v) for v in g.center],
                    "yaw_deg": float(np.degrees(g.yaw)),
                    "half_size": float(g.half_size),
                }
                for g in self.gates
            ],
        }
        with open(path, "w") as f:
            yaml.safe_dump(doc, f, sort_keys=False)

    @classmethod
    def load(cls, path) -> "Track":
        with open(path) as f:
            doc = yaml.safe_load(f)
        try:
            gates = [
                Gate(np.asarray(g["center"], dtype=float),
                     np.radians(float(g["yaw_deg"])),
                     float(g.get("half_size", 0.5)))
                for g in doc["gates"]
            ]
            return cls(gates, np.asarray(doc["start"], dtype=float),
                       float(doc.get("ground_z", 0.0)))
        except (KeyError, TypeError) as e:
            raise ValueError(f"{path}: malformed track file: {e}") from e


@dataclass
class StepEvent:
    """Outcome of one motion segment against the target gate and ground."""

    kind: int = EVENT_NONE
    crossing_point: Optional[np.ndarray] = None

    @property
    def name(self) -> str:
        return _EVENT_NAMES[self.kind]


def detect_event(p_prev: np.ndarray, p_curr: np.ndarray, target: Gate,
                 ground_z: float) -> StepEvent:
    """Classify the segment p_prev -> p_curr against gate plane and ground.

    When both a plane crossing and ground contact occur within the same
    segment, the earlier one along the segment decides (ties collide).
    """
    p_prev = np.asarray(p_prev, dtype=float)
    p_curr = np.asarray(p_curr, dtype=float)

    # Ground contact parameter along the segment, if any.
    t_ground = None
    if p_prev[2] >= ground_z:
        t_ground = 0.0
    elif p_curr[2] >= ground_z:
        t_ground = (ground_z - p_prev[2]) / (p_curr[2] - p_prev[2])

    # Plane crossing, if any. Backward crossings inside the boundary are
    # non-events (no reverse-pass exploit) and do not shadow ground contact.
    t_plane = None
    plane_kind = EVENT_NONE
    crossing = None
    s0 = float(np.dot(p_prev - target.center, target.normal))
    s1 = float(np.dot(p_curr - target.center, target.normal))
    forward = s0 < 0.0 <= s1
    backward = s1 < 0.0 <= s0
    if forward or backward:
        t = s0 / (s0 - s1)
        point = p_prev + t * (p_curr - p_prev)
        d = point - target.center
        inside = (abs(float(np.dot(d, target.lateral))) <= target.half_size
                  and abs(float(d[2])) <= target.half_size)
        if forward and inside:
            t_plane, plane_kind, crossing = t, EVENT_GATE_PASSED, point
        elif not inside:
            t_plane, plane_kind, crossing = t, EVENT_COLLISION, point

    if t_plane is not None and (t_ground is None or t_plane < t_ground):
        return StepEvent(plane_kind, crossing)
    if t_ground is not None:
        return StepEvent(EVENT_COLLISION)
    return StepEvent(EVENT_NONE)


def reward(p_prev: np.ndarray, p_curr: np.ndarray, target: Gate,
           event: StepEvent) -> float:
    """Race reward for the segment whose event was already classified."""
    if event.kind == EVENT_COLLISION:
        return COLLISION_PENALTY
    if event.kind == EVENT_GATE_PASSED:
        miss = float(np.linalg.norm(event.crossing_point - target.center))
        return GATE_REWARD - GATE_REWARD * miss
    d_prev = float(np.linalg.norm(np.asarray(p_prev, dtype=float) - target.center))
    d_curr = float(np.linalg.norm(np.asarray(p_curr, dtype=float) - target.center))
    return d_prev - d_curr


def advance_target(track: Track, current_index: int):
    """Next target index in the cycle; second value flags a lap wraparound."""
    if not 0 <= current_index < track.n_gates:
        raise IndexError(f"gate index {current_index} out of range")
    nxt = (current_index + 1) % track.n_gates
    return nxt, nxt == 0


def initial_target_index(track: Track) -> int:
    """Gate nearest the start among those the start point is behind."""
    best, best_dist = None, np.inf
    for i, g in enumerate(track.gates):
        dist = float(np.linalg.norm(track.start - g.center))
        behind = float(np.dot(track.start - g.center, g.normal)) < 0.0
        if behind and dist < best_dist:
            best, best_dist = i, dist
    if best is not None:
        return best
    return int(np.argmin([np.linalg.norm(track.start - g.center)
                          for g in track.gates]))


# ---------------------------------------------------------------------------
# Vectorized variants used by the parallel environment. Semantics match the
# scalar functions exactly (asserted in the test suite).
# ---------------------------------------------------------------------------

def detect_events_batch(p_prev, p_curr, centers, normals, laterals, halves,
                        ground_z):
    """Batched detect_event over per-environment target-gate arrays.

    Args:
        p_prev, p_curr: (N, 3) positions.
        centers, normals, laterals: (N, 3) target-gate geometry per env.
        halves: (N,) gate half sizes.
        ground_z: scalar ground level.

    Returns:
        (kinds (N,) int, crossing (N, 3) with NaN rows where no plane
        crossing happened).
    """
    p_prev = np.asarray(p_prev, dtype=float)
    p_curr = np.asarray(p_curr, dtype=float)
    n = p_prev.shape[0]

    z0, z1 = p_prev[:, 2], p_curr[:, 2]
    ground_now = z0 >= ground_z
    ground_enter = (~ground_now) & (z1 >= ground_z)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(
            ground_now, 0.0,
            np.where(ground_enter, (ground_z - z0) / (z1 - z0), np.inf),
        )

    s0 = np.einsum("ij,ij->i", p_prev - centers, normals)
    s1 = np.einsum("ij,ij->i", p_curr - centers, normals)
    fwd = (s0 < 0.0) & (s1 >= 0.0)
    bwd = (s1 < 0.0) & (s0 >= 0.0)
    crossed = fwd | bwd
    with np.errstate(divide="ignore", invalid="ignore"):
        t_plane = np.where(crossed, s0 / (s0 - s1), np.inf)

    crossing = np.full((n, 3), np.nan)
    if np.any(crossed):
        seg = p_curr - p_prev
        pts = p_prev + t_plane[:, None] * seg
        crossing[crossed] = pts[crossed]
    d = crossing - centers
    lat = np.einsum("ij,ij->i", np.nan_to_num(d), laterals)
    inside = (np.abs(lat) <= halves) & (np.abs(np.nan_to_num(d[:, 2])) <= halves)

    # Backward crossings inside the boundary are non-events and do not
    # shadow a later ground contact.
    plane_event = crossed & ~(bwd & inside)
    plane_first = plane_event & (t_plane < t_ground)
    ground_first = np.isfinite(t_ground) & ~plane_first

    kinds = np.zeros(n, dtype=int)
    kinds[plane_first & ~inside] = EVENT_COLLISION
    kinds[plane_first & inside] = EVENT_GATE_PASSED  # implies forward
    kinds[ground_first] = EVENT_COLLISION
    crossing[~crossed] = np.nan
    return kinds, crossing


def rewards_batch(p_prev, p_curr, centers, kinds, crossing):
    """Batched reward over classified segments (same inputs as above)."""
    d_prev = np.linalg.norm(p_prev - centers, axis=1)
    d_curr = np.linalg.norm(p_curr - centers, axis=1)
    out = d_prev - d_curr
    passed = kinds == EVENT_GATE_PASSED
    if np.any(passed):
        miss = np.linalg.norm(crossing[passed] - centers[passed], axis=1)
        out[passed] = GATE_REWARD - GATE_REWARD * miss
    out[kinds == EVENT_COLLISION] = COLLISION_PENALTY
    return out
