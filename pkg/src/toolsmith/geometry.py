"""Rigid-transform and quaternion math shared by every other module.

Quaternions are float64 arrays in (w, x, y, z) order. Euler angles follow
the fixed-axis X-Y-Z convention (roll about world x, then pitch about world
y, then yaw about world z), i.e. R = Rz(yaw) @ Ry(pitch) @ Rx(roll) -- the
same convention URDF uses for its ``rpy`` attributes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector (or an (n, 3) stack of vectors) by a unit quaternion."""
    w, x, y, z = q
    u = np.array([x, y, z])
    v = np.asarray(v, dtype=float)
    uv = np.cross(u, v)
    uuv = np.cross(u, uv)
    return v + 2.0 * (w * uv + uuv)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_euler(rpy: np.ndarray) -> np.ndarray:
    """Fixed-axis X-Y-Z Euler angles to unit quaternion (q = qz * qy * qx)."""
    roll, pitch, yaw = (float(a) for a in rpy)
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )


def euler_from_quat(q: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_from_euler`.

    At gimbal lock (|pitch| = pi/2) roll and yaw are degenerate; the
    roll = 0 branch is returned.
    """
    w, x, y, z = quat_normalize(q)
    sin_pitch = 2.0 * (w * y - z * x)
    if abs(sin_pitch) >= 1.0 - 1e-12:
        pitch = math.copysign(math.pi / 2, sin_pitch)
        # At the singularity only yaw -+ roll is observable; put it all in yaw.
        return np.array([0.0, pitch, 2.0 * math.atan2(z, w)])
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    pitch = math.asin(sin_pitch)
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return np.array([roll, pitch, yaw])


def quat_slerp(q0: np.ndarray, q1: np.ndarray, t: float) -> np.ndarray:
    """Spherical linear interpolation along the shorter great-circle arc.

    The second endpoint is sign-flipped when the pair straddles hemispheres,
    so slerp(q, -q, t) traces the same rotations as slerp(q, q, t).
    """
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    dot = float(q0 @ q1)
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        # Nearly parallel: nlerp is exact to first order and avoids 0/0.
        return quat_normalize(q0 + t * (q1 - q0))
    theta = math.acos(min(dot, 1.0))
    sin_theta = math.sin(theta)
    a = math.sin((1.0 - t) * theta) / sin_theta
    b = math.sin(t * theta) / sin_theta
    return quat_normalize(a * q0 + b * q1)


def quat_angle_between(q0: np.ndarray, q1: np.ndarray) -> float:
    """Geodesic rotation angle in radians, always in [0, pi]."""
    dot = abs(float(quat_normalize(q0) @ quat_normalize(q1)))
    return 2.0 * math.acos(min(dot, 1.0))


@dataclass(frozen=True)
class Transform:
    """Rigid transform: rotate by ``rotation`` (wxyz quaternion), then translate.

    Instances are treated as immutable; the raw constructor trusts its inputs
    (hot paths create many of these), use :meth:`make` at parsing boundaries.
    """

    position: np.ndarray
    rotation: np.ndarray

    @staticmethod
    def make(position=(0.0, 0.0, 0.0), rpy=None, quat=None) -> "Transform":
        pos = np.asarray(position, dtype=float).reshape(3).copy()
        if quat is not None:
            rot = quat_normalize(quat)
        elif rpy is not None:
            rot = quat_from_euler(np.asarray(rpy, dtype=float))
        else:
            rot = IDENTITY_QUAT.copy()
        return Transform(pos, rot)

    @staticmethod
    def identity() -> "Transform":
        return Transform(np.zeros(3), IDENTITY_QUAT.copy())

    def apply(self, point: np.ndarray) -> np.ndarray:
        return quat_rotate(self.rotation, point) + self.position

    def compose(self, other: "Transform") -> "Transform":
        """Composition that applies ``other`` first, then ``self``."""
        return Transform(
            self.apply(other.position), quat_mul(self.rotation, other.rotation)
        )

    def inverse(self) -> "Transform":
        inv_rot = quat_conjugate(self.rotation)
        return Transform(-quat_rotate(inv_rot, self.position), inv_rot)

    def rpy(self) -> np.ndarray:
        return euler_from_quat(self.rotation)

    def almost_equal(self, other: "Transform", tol: float = 1e-9) -> bool:
        if np.max(np.abs(self.position - other.position)) > tol:
            return False
        # q and -q are the same rotation.
        return bool(
            np.max(np.abs(self.rotation - other.rotation)) <= tol
            or np.max(np.abs(self.rotation + other.rotation)) <= tol
        )


# Unit-cube corner signs, used to enumerate box corners under a transform.
_CORNER_SIGNS = np.array(
    [
        [sx, sy, sz]
        for sx in (-1.0, 1.0)
        for sy in (-1.0, 1.0)
        for sz in (-1.0, 1.0)
    ]
)


def box_corners(half_extents: np.ndarray, pose: Transform) -> np.ndarray:
    """World positions of the 8 corners of an oriented box, shape (8, 3)."""
    local = _CORNER_SIGNS * np.asarray(half_extents, dtype=float)
    return quat_rotate(pose.rotation, local) + pose.position


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box given by min/max corners. Degenerate boxes are allowed."""

    lo: np.ndarray
    hi: np.ndarray

    @staticmethod
    def from_points(points: np.ndarray) -> "Aabb":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return Aabb(pts.min(axis=0), pts.max(axis=0))

    @staticmethod
    def from_box(half_extents: np.ndarray, pose: Transform) -> "Aabb":
        return Aabb.from_points(box_corners(half_extents, pose))

    @staticmethod
    def point(p: np.ndarray) -> "Aabb":
        p = np.asarray(p, dtype=float)
        return Aabb(p.copy(), p.copy())

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def expanded(self, margin: float) -> "Aabb":
        return Aabb(self.lo - margin, self.hi + margin)

    def overlaps(self, other: "Aabb", tol: float = 0.0) -> bool:
        """True when the boxes intersect; touching counts within ``tol``."""
        return bool(
            np.all(self.lo <= other.hi + tol) and np.all(other.lo <= self.hi + tol)
        )

    def contains(self, other: "Aabb", tol: float = 0.0) -> bool:
        return bool(
            np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol)
        )

    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def size(self) -> np.ndarray:
        return self.hi - self.lo
