"""Rigid-body poses and small rotation helpers shared by the kinematics and scene code."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_QUAT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """Position (meters) plus orientation as a unit quaternion (w, x, y, z).

    Instances are treated as immutable values; the underlying arrays must not
    be written to after construction.
    """

    position: np.ndarray
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self) -> None:
        pos = np.asarray(self.position, dtype=float).reshape(3)
        quat = np.asarray(self.quaternion, dtype=float).reshape(4)
        norm = float(np.linalg.norm(quat))
        if abs(norm - 1.0) > 1e-6:
            if norm == 0.0:
                raise ValueError("zero quaternion")
            quat = quat / norm
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "quaternion", quat)

    @classmethod
    def from_matrix(cls, transform: np.ndarray) -> "Pose":
        return cls(transform[:3, 3].copy(), quat_from_matrix(transform[:3, :3]))

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy) -> "Pose":
        return cls(np.asarray(xyz, dtype=float), quat_from_rpy(*rpy))

    def matrix(self) -> np.ndarray:
        transform = np.eye(4)
        transform[:3, :3] = matrix_from_quat(self.quaternion)
        transform[:3, 3] = self.position
        return transform

    def inverse(self) -> "Pose":
        rot = matrix_from_quat(self.quaternion).T
        return Pose(-rot @ self.position, quat_from_matrix(rot))

    def compose(self, other: "Pose") -> "Pose":
        """Pose of `other` expressed through this pose (this ∘ other)."""
        return Pose.from_matrix(self.matrix() @ other.matrix())

    def transform_point(self, point: np.ndarray) -> np.ndarray:
        return matrix_from_quat(self.quaternion) @ np.asarray(point, dtype=float) + self.position

    def inverse_transform_point(self, point: np.ndarray) -> np.ndarray:
        rot = matrix_from_quat(self.quaternion)
        return rot.T @ (np.asarray(point, dtype=float) - self.position)

    def is_close(self, other: "Pose", pos_tol: float = 1e-9, rot_tol: float = 1e-9) -> bool:
        if np.linalg.norm(self.position - other.position) > pos_tol:
            return False
        dot = abs(float(np.dot(self.quaternion, other.quaternion)))
        return bool(1.0 - min(dot, 1.0) <= rot_tol)


def quat_from_matrix(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a 3x3 rotation matrix (Shepperd's method)."""
    m = np.asarray(rot, dtype=float)
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0:
        s = np.sqrt(trace + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    quat = np.array([w, x, y, z])
    if quat[0] < 0:
        quat = -quat
    return quat / np.linalg.norm(quat)


def matrix_from_quat(quat: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(quat, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Quaternion for intrinsic x-y-z (roll, pitch, yaw) rotation, radians."""
    return quat_from_matrix(rot_z(yaw) @ rot_y(pitch) @ rot_x(roll))


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def orientation_angle(quat_a: np.ndarray, quat_b: np.ndarray) -> float:
    """Angle (radians) of the relative rotation between two unit quaternions."""
    dot = abs(float(np.dot(quat_a, quat_b)))
    return 2.0 * np.arccos(min(1.0, dot))


def rotation_log(rot: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (the matrix logarithm's vector part)."""
    cos_angle = (np.trace(rot) - 1.0) / 2.0
    cos_angle = min(1.0, max(-1.0, cos_angle))
    angle = np.arccos(cos_angle)
    if angle < 1e-12:
        return np.zeros(3)
    axis = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    if angle > np.pi - 1e-6:
        # Near pi the off-diagonal difference degenerates; recover axis from the
        # symmetric part instead.
        diag = np.diag(rot)
        axis = np.sqrt(np.maximum((diag + 1.0) / 2.0, 0.0))
        axis[1] = np.copysign(axis[1], rot[0, 1])
        axis[2] = np.copysign(axis[2], rot[0, 2])
        return axis / np.linalg.norm(axis) * angle
    return axis / (2.0 * np.sin(angle)) * angle
