"""Waypoint plans and their densification into executable trajectories.

A plan is the N x 6 or N x 7 array a design agent emits: xyz position,
roll-pitch-yaw orientation, and (in 7-dim mode) a binary gripper command.
Densification linearly interpolates positions and slerps orientations so
that no step exceeds the position/angle bounds the simulator relies on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidPlan
from .geometry import (
    Transform,
    euler_from_quat,
    quat_angle_between,
    quat_from_euler,
    quat_slerp,
)

DEFAULT_STEP_MAX_M = 0.005
DEFAULT_ANGLE_STEP_MAX_RAD = math.radians(1.0)

GRIPPER_OPEN = 0
GRIPPER_CLOSED = 1


def euler_to_quaternion(rpy) -> np.ndarray:
    """Roll-pitch-yaw (fixed world axes, x then y then z) to a unit quaternion."""
    return quat_from_euler(np.asarray(rpy, dtype=float))


def quaternion_to_euler(q) -> np.ndarray:
    """Inverse of :func:`euler_to_quaternion`; roll=0 branch at gimbal lock."""
    return euler_from_quat(np.asarray(q, dtype=float))


def slerp(q0, q1, t: float) -> np.ndarray:
    """Shorter-arc spherical interpolation between two unit quaternions."""
    return quat_slerp(np.asarray(q0, dtype=float), np.asarray(q1, dtype=float), t)


@dataclass(frozen=True)
class Waypoint:
    position: np.ndarray
    rpy: np.ndarray
    gripper: int | None = None

    @staticmethod
    def from_row(row) -> "Waypoint":
        values = [float(v) for v in row]
        if len(values) == 6:
            return Waypoint(np.array(values[:3]), np.array(values[3:6]))
        if len(values) == 7:
            g = values[6]
            if g not in (0.0, 1.0):
                raise InvalidPlan(f"gripper command must be 0 or 1, got {g}")
            return Waypoint(np.array(values[:3]), np.array(values[3:6]), int(g))
        raise InvalidPlan(f"waypoint row must have 6 or 7 numbers, got {len(values)}")

    def to_row(self) -> list[float]:
        row = [*map(float, self.position), *map(float, self.rpy)]
        if self.gripper is not None:
            row.append(float(self.gripper))
        return row


@dataclass(frozen=True)
class ActionPlan:
    """Ordered end-effector waypoints; all rows share one dimensionality."""

    waypoints: tuple[Waypoint, ...]
    uses_gripper: bool

    def __post_init__(self):
        if not self.waypoints:
            raise InvalidPlan("a plan needs at least one waypoint")
        for wp in self.waypoints:
            if (wp.gripper is not None) != self.uses_gripper:
                raise InvalidPlan("mixed 6- and 7-dim waypoints in one plan")
            if not (
                np.all(np.isfinite(wp.position)) and np.all(np.isfinite(wp.rpy))
            ):
                raise InvalidPlan("non-finite waypoint values")

    @staticmethod
    def from_array(rows) -> "ActionPlan":
        waypoints = tuple(Waypoint.from_row(r) for r in rows)
        if not waypoints:
            raise InvalidPlan("empty waypoint array")
        return ActionPlan(waypoints, uses_gripper=waypoints[0].gripper is not None)

    def to_array(self) -> list[list[float]]:
        return [wp.to_row() for wp in self.waypoints]


@dataclass(frozen=True)
class TrajectorySample:
    index: int
    pose: Transform
    gripper: int
    segment: int  # index of the source waypoint segment this sample belongs to


@dataclass(frozen=True)
class DenseTrajectory:
    samples: tuple[TrajectorySample, ...]
    step_max: float
    angle_step_max: float

    def __len__(self) -> int:
        return len(self.samples)


def densify(
    plan: ActionPlan,
    step_max: float = DEFAULT_STEP_MAX_M,
    angle_step_max: float = DEFAULT_ANGLE_STEP_MAX_RAD,
) -> DenseTrajectory:
    """Subdivide a plan so consecutive samples obey both step bounds.

    Positions interpolate linearly per segment; orientations slerp along the
    shorter arc. The gripper bit holds the segment-start value and switches
    exactly at the segment end.
    """
    if step_max <= 0 or angle_step_max <= 0:
        raise InvalidPlan("step bounds must be positive")
    wps = plan.waypoints
    quats = [euler_to_quaternion(wp.rpy) for wp in wps]
    grippers = [
        wp.gripper if wp.gripper is not None else GRIPPER_OPEN for wp in wps
    ]

    samples = [
        TrajectorySample(0, Transform(wps[0].position.copy(), quats[0]), grippers[0], 0)
    ]
    index = 1
    for seg in range(len(wps) - 1):
        p0, p1 = wps[seg].position, wps[seg + 1].position
        q0, q1 = quats[seg], quats[seg + 1]
        dist = float(np.linalg.norm(p1 - p0))
        angle = quat_angle_between(q0, q1)
        n_sub = max(
            1,
            math.ceil(dist / step_max - 1e-12),
            math.ceil(angle / angle_step_max - 1e-12),
        )
        for j in range(1, n_sub + 1):
            t = j / n_sub
            pose = Transform((1.0 - t) * p0 + t * p1, quat_slerp(q0, q1, t))
            bit = grippers[seg + 1] if j == n_sub else grippers[seg]
            samples.append(TrajectorySample(index, pose, bit, seg))
            index += 1
    return DenseTrajectory(tuple(samples), step_max, angle_step_max)


def path_length(traj: DenseTrajectory) -> float:
    """Sum of Euclidean distances between consecutive sample positions."""
    if len(traj.samples) < 2:
        return 0.0
    positions = np.array([s.pose.position for s in traj.samples])
    return float(np.sum(np.linalg.norm(np.diff(positions, axis=0), axis=1)))
