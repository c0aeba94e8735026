"""Rigid-body poses, quaternion algebra and the pinhole camera model.

Conventions
-----------
- Quaternions are scalar-first ``(w, x, y, z)`` and canonicalized so that
  ``w >= 0``; ``q`` and ``-q`` encode the same rotation.
- A :class:`Pose` stores the world-to-camera transform: a world point ``X``
  lands in the camera frame at ``R @ X + t`` where ``R`` comes from the
  orientation and ``t`` is the position field.
- Pixel centres sit at integer coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GeometryError",
    "Pose",
    "RigidTransform",
    "Intrinsics",
    "quat_normalize",
    "quat_multiply",
    "quat_to_matrix",
    "matrix_to_quat",
    "so3_exp",
    "skew",
    "pose_to_transform",
    "transform_to_pose",
    "transform_inverse",
    "compose",
    "relative_transform",
    "project",
    "backproject",
    "rotation_angle_deg",
]


class GeometryError(ValueError):
    """Raised for invalid quaternions, depths or points behind the camera."""


def quat_normalize(q) -> np.ndarray:
    """Return ``q`` scaled to unit norm with a non-negative scalar part.

    When the scalar part is zero the first non-zero component is made
    positive, so every rotation has exactly one representative.
    """
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise GeometryError(f"cannot normalize quaternion {q!r}")
    q = q / n
    lead = q[np.flatnonzero(q)[0]]
    if q[0] < 0.0 or (q[0] == 0.0 and lead < 0.0):
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Convert a rotation matrix to a canonical unit quaternion.

    Uses Shepperd's method: the largest of the four candidate pivots is
    chosen so the division is always well conditioned.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.diag(R)
    k = int(np.argmax([tr, *diag]))
    if k == 0:
        s = math.sqrt(1.0 + tr) * 2.0
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi) -> np.ndarray:
    """Quaternion of the rotation vector ``phi`` (axis times angle, radians)."""
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = float(np.linalg.norm(phi))
    half = 0.5 * theta
    if theta < 1e-8:
        # Taylor expansion of sin(x/2)/x keeps the map smooth at zero.
        k = 0.5 - theta * theta / 48.0
    else:
        k = math.sin(half) / theta
    return quat_normalize(np.concatenate([[math.cos(half)], k * phi]))


@dataclass(frozen=True)
class Pose:
    """World-to-camera pose ``p = [x, q]``.

    Parameters
    ----------
    position : array_like, shape (3,)
        Translation of the world-to-camera transform, metres.
    orientation : array_like, shape (4,)
        Rotation quaternion ``(w, x, y, z)``; normalized on construction.
    """

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.array(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise GeometryError("pose position must be finite")
        quat = quat_normalize(self.orientation)
        pos.setflags(write=False)
        quat.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", quat)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def camera_center(self) -> np.ndarray:
        """Camera centre in world coordinates, ``-R^T t``."""
        return -self.rotation.T @ self.position

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(np.array_equal(self.position, other.position)
                    and np.array_equal(self.orientation, other.orientation))

    def __hash__(self):
        return hash((self.position.tobytes(), self.orientation.tobytes()))


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion ``x -> R x + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        """Transform one point of shape (3,) or many of shape (N, 3)."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise GeometryError("image dimensions must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


def pose_to_transform(p: Pose) -> RigidTransform:
    return RigidTransform(quat_to_matrix(p.orientation), p.position)


def transform_to_pose(T: RigidTransform) -> Pose:
    return Pose(T.translation, matrix_to_quat(T.rotation))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a * b``: apply ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def transform_inverse(T: RigidTransform) -> RigidTransform:
    Rt = T.rotation.T
    return RigidTransform(Rt, -Rt @ T.translation)


def relative_transform(T_prev_world: RigidTransform, T_curr_world: RigidTransform) -> RigidTransform:
    """Motion taking previous-camera points into the current camera frame.

    Both arguments are world-to-camera transforms, so the result is
    ``T_curr_world * inverse(T_prev_world)``.
    """
    return compose(T_curr_world, transform_inverse(T_prev_world))


def project(point, K: Intrinsics) -> np.ndarray:
    """Pinhole projection of a camera-frame point; raises if ``z <= 0``."""
    x, y, z = np.asarray(point, dtype=float).reshape(3)
    if not z > 0:
        raise GeometryError(f"point {point!r} is behind the camera")
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])


def backproject(pixel, depth: float, K: Intrinsics) -> np.ndarray:
    """Lift pixel ``(u, v)`` at metric ``depth`` into the camera frame."""
    if not (depth > 0 and math.isfinite(depth)):
        raise GeometryError(f"invalid depth {depth!r}")
    u, v = np.asarray(pixel, dtype=float).reshape(2)
    return np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])


def rotation_angle_deg(q1, q2) -> float:
    """Geodesic angle between two rotations, in degrees, within [0, 180].

    Equal to ``2 acos(min(1, |<q1, q2>|))``. With ``a`` the angle between
    the two unit 4-vectors, ``|q1 - q2| = 2 sin(a/2)`` and ``|q1 + q2| =
    2 cos(a/2)``, so ``4 atan2`` of the two norms gives the same value while
    keeping full precision for tiny angles and returning exactly 0 for
    equal inputs.
    """
    q1 = quat_normalize(q1)
    q2 = quat_normalize(q2)
    if q1 @ q2 < 0:
        q2 = -q2
    angle = 4.0 * math.atan2(float(np.linalg.norm(q1 - q2)), float(np.linalg.norm(q1 + q2)))
    return math.degrees(angle)
