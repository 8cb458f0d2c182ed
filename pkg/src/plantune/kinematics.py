"""Serial-chain kinematics for the 7-DoF arm: FK, geometric Jacobian, dexterity, DLS IK.

Joint frames follow the modified Denavit-Hartenberg convention: the transform
into frame i is RotX(alpha) · TransX(a) · RotZ(theta + offset) · TransZ(d).
All quantities live in the arm base frame; callers convert to world coordinates
through the robot base pose.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import ConfigError, load_document, require
from .geometry import Pose, rotation_log

NUM_JOINTS = 7


class NoSolutionError(RuntimeError):
    """Inverse kinematics could not reach the target."""


class DegenerateJacobianError(ValueError):
    """Jacobian with no non-zero singular value; dexterity is undefined."""


@dataclass(frozen=True)
class CollisionSphere:
    center: tuple[float, float, float]  # in the owning link's frame
    radius: float


@dataclass(frozen=True)
class JointSpec:
    alpha: float
    a: float
    d: float
    theta_offset: float
    lower: float
    upper: float
    spheres: tuple[CollisionSphere, ...]


@dataclass(frozen=True)
class ArmModel:
    name: str
    joints: tuple[JointSpec, ...]
    tool_offset: float  # tool point along the last frame's z axis, meters
    gripper_spheres: tuple[CollisionSphere, ...]
    home: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.joints) != NUM_JOINTS:
            raise ConfigError(f"arm model needs {NUM_JOINTS} joints, got {len(self.joints)}")
        for i, joint in enumerate(self.joints):
            if not np.isfinite(joint.lower) or not np.isfinite(joint.upper) or joint.lower >= joint.upper:
                raise ConfigError(f"joints[{i}]: limits must be finite with lower < upper")
            if not joint.spheres:
                raise ConfigError(f"joints[{i}]: at least one collision sphere required")

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @property
    def max_reach(self) -> float:
        return sum(abs(j.a) + abs(j.d) for j in self.joints) + self.tool_offset

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower_limits, self.upper_limits)


def load_arm_model(path: str | Path) -> ArmModel:
    return arm_model_from_document(load_document(path))


def load_arm_model_text(text: str, origin: str = "<arm>") -> ArmModel:
    from .config import parse_document

    return arm_model_from_document(parse_document(text, origin))


def arm_model_from_document(doc: dict) -> ArmModel:
    name = doc.get("name", "arm")
    raw_joints = doc.get("joints")
    if not isinstance(raw_joints, list):
        raise ConfigError("joints: expected a list")
    joints = []
    for i, item in enumerate(raw_joints):
        where = f"joints[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{where}: expected a mapping")
        joints.append(
            JointSpec(
                alpha=require(item, "alpha", float, where),
                a=require(item, "a", float, where),
                d=require(item, "d", float, where),
                theta_offset=float(item.get("theta_offset", 0.0)),
                lower=require(item, "lower", float, where),
                upper=require(item, "upper", float, where),
                spheres=_parse_spheres(item.get("spheres", []), where),
            )
        )
    gripper = doc.get("gripper", {})
    home = doc.get("home", [0.0] * NUM_JOINTS)
    if not isinstance(home, list) or len(home) != NUM_JOINTS:
        raise ConfigError("home: expected a list of 7 angles")
    return ArmModel(
        name=name,
        joints=tuple(joints),
        tool_offset=float(gripper.get("tool_offset", 0.0)),
        gripper_spheres=_parse_spheres(gripper.get("spheres", []), "gripper"),
        home=tuple(float(v) for v in home),
    )


def _parse_spheres(raw: object, where: str) -> tuple[CollisionSphere, ...]:
    if not isinstance(raw, list):
        raise ConfigError(f"{where}.spheres: expected a list")
    spheres = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "center" not in item or "radius" not in item:
            raise ConfigError(f"{where}.spheres[{i}]: needs center and radius")
        center = item["center"]
        if not isinstance(center, list) or len(center) != 3:
            raise ConfigError(f"{where}.spheres[{i}].center: expected [x, y, z]")
        radius = float(item["radius"])
        if radius <= 0:
            raise ConfigError(f"{where}.spheres[{i}].radius: must be positive")
        spheres.append(CollisionSphere(tuple(float(c) for c in center), radius))
    return tuple(spheres)


# --------------------------------------------------------------------------
# Forward kinematics
# --------------------------------------------------------------------------

def _joint_transform(joint: JointSpec, angle: float) -> np.ndarray:
    ca, sa = np.cos(joint.alpha), np.sin(joint.alpha)
    ct, st = np.cos(angle + joint.theta_offset), np.sin(angle + joint.theta_offset)
    # RotX(alpha) · TransX(a) · RotZ(theta) · TransZ(d), composed by hand.
    return np.array(
        [
            [ct, -st, 0.0, joint.a],
            [st * ca, ct * ca, -sa, -sa * joint.d],
            [st * sa, ct * sa, ca, ca * joint.d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def link_transforms(model: ArmModel, q: np.ndarray) -> list[np.ndarray]:
    """Homogeneous transforms of the 7 link frames plus the tool frame (8 matrices)."""
    q = np.asarray(q, dtype=float).reshape(NUM_JOINTS)
    frames = []
    current = np.eye(4)
    for joint, angle in zip(model.joints, q):
        current = current @ _joint_transform(joint, angle)
        frames.append(current)
    tool = current.copy()
    tool[:3, 3] = tool[:3, 3] + tool[:3, 2] * model.tool_offset
    frames.append(tool)
    return frames


def forward_kinematics(model: ArmModel, q: np.ndarray) -> tuple[Pose, list[Pose]]:
    """End-effector pose and the 7 link-frame poses for a joint configuration."""
    frames = link_transforms(model, q)
    link_poses = [Pose.from_matrix(t) for t in frames[:NUM_JOINTS]]
    return Pose.from_matrix(frames[-1]), link_poses


def jacobian(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian at the tool point: 6x7, linear rows then angular rows.

    Column i is (z_i × (p_ee − p_i), z_i) for revolute joint i.
    """
    frames = link_transforms(model, q)
    p_ee = frames[-1][:3, 3]
    J = np.zeros((6, NUM_JOINTS))
    for i in range(NUM_JOINTS):
        z = frames[i][:3, 2]
        d = p_ee - frames[i][:3, 3]
        # z × d written out; np.cross carries too much call overhead here.
        J[0, i] = z[1] * d[2] - z[2] * d[1]
        J[1, i] = z[2] * d[0] - z[0] * d[2]
        J[2, i] = z[0] * d[1] - z[1] * d[0]
        J[3:, i] = z
    return J


# --------------------------------------------------------------------------
# Dexterity
# --------------------------------------------------------------------------

class DexterityIndex(NamedTuple):
    value: float
    singular: bool


_SINGULAR_RATIO = 1e-12


def dexterity(J: np.ndarray) -> DexterityIndex:
    """Ratio of smallest to largest singular value of the Jacobian.

    1 means an isotropic configuration; the value falls toward 0 as the arm
    nears a singularity.  A rank-deficient Jacobian reports 0 with the
    singular flag set rather than raising.
    """
    J = np.asarray(J, dtype=float)
    if not np.all(np.isfinite(J)):
        raise DegenerateJacobianError("Jacobian has non-finite entries")
    sigma = np.linalg.svd(J, compute_uv=False)
    largest = float(sigma[0])
    smallest = float(sigma[-1])
    if largest == 0.0:
        raise DegenerateJacobianError("all singular values are zero")
    ratio = smallest / largest
    if ratio < _SINGULAR_RATIO:
        return DexterityIndex(0.0, True)
    return DexterityIndex(ratio, False)


# --------------------------------------------------------------------------
# Damped-least-squares inverse kinematics
# --------------------------------------------------------------------------

_DLS_LAMBDA = 0.01
_NULLSPACE_GAIN = 0.05
_MAX_STEP = 0.2  # rad, per-iteration infinity-norm clamp


def pose_error(target: Pose, current: Pose) -> tuple[np.ndarray, float, float]:
    """6-vector twist error plus its position / rotation magnitudes."""
    pos_err = target.position - current.position
    rot_err = rotation_log(
        _rmat(target) @ _rmat(current).T
    )
    err = np.concatenate([pos_err, rot_err])
    return err, float(np.linalg.norm(pos_err)), float(np.linalg.norm(rot_err))


def axis_error(target: Pose, current: Pose) -> tuple[np.ndarray, float, float]:
    """Error for a 5-DoF task: position plus tool z-axis alignment, spin free."""
    pos_err = target.position - current.position
    z_target = _rmat(target)[:, 2]
    z_current = _rmat(current)[:, 2]
    rot_err = np.cross(z_current, z_target)
    angle = float(
        np.arccos(np.clip(np.dot(z_current, z_target), -1.0, 1.0))
    )
    return np.concatenate([pos_err, rot_err]), float(np.linalg.norm(pos_err)), angle


def _rmat(pose: Pose) -> np.ndarray:
    from .geometry import matrix_from_quat

    return matrix_from_quat(pose.quaternion)


def solve_ik(
    model: ArmModel,
    target: Pose,
    seed: np.ndarray,
    pos_tol: float = 1e-3,
    rot_tol: float = 1e-2,
    max_iters: int = 300,
    orientation: str = "full",
) -> np.ndarray:
    """Damped-least-squares IK with a nullspace bias toward mid-range joints.

    `orientation` is "full" for a 6-DoF pose task or "axis" to align only the
    tool z-axis (natural for a rotationally symmetric gripper).  Joints pinned
    at a limit are masked out of the task step so the solver cannot stall
    pushing against them.  Raises NoSolutionError when the target is provably
    out of reach or the iteration budget runs out; on success the returned
    configuration is inside joint limits and FK-verified.
    """
    if pos_tol <= 0 or rot_tol <= 0:
        raise ValueError("tolerances must be positive")
    if orientation not in ("full", "axis"):
        raise ValueError(f"unknown orientation mode {orientation!r}")
    if np.linalg.norm(target.position) > model.max_reach:
        raise NoSolutionError(
            f"target at {np.linalg.norm(target.position):.3f} m exceeds reach {model.max_reach:.3f} m"
        )
    error_fn = pose_error if orientation == "full" else axis_error
    q = model.clamp(np.asarray(seed, dtype=float).reshape(NUM_JOINTS).copy())
    lo, hi = model.lower_limits, model.upper_limits
    mid = (lo + hi) / 2.0
    damping = _DLS_LAMBDA**2 * np.eye(6)
    for _ in range(max_iters):
        current, _ = forward_kinematics(model, q)
        err, pos_norm, rot_norm = error_fn(target, current)
        if pos_norm <= pos_tol and rot_norm <= rot_tol:
            return q
        J = jacobian(model, q)
        # Saturated joints cannot move further outward: drop their columns.
        at_lower = (q <= lo + 1e-9)
        at_upper = (q >= hi - 1e-9)
        J_free = J.copy()
        J_free[:, at_lower | at_upper] = 0.0
        JJt = J_free @ J_free.T
        dq = J_free.T @ np.linalg.solve(JJt + damping, err)
        dq[at_lower] = np.maximum(dq[at_lower], 0.0)
        dq[at_upper] = np.minimum(dq[at_upper], 0.0)
        # Project the mid-range bias through the nullspace so it cannot fight
        # the task-space correction.
        pinv = J_free.T @ np.linalg.solve(JJt + damping, J_free)
        bias = _NULLSPACE_GAIN * (mid - q)
        dq = dq + (np.eye(NUM_JOINTS) - pinv) @ bias
        step = float(np.max(np.abs(dq)))
        if step > _MAX_STEP:
            dq = dq * (_MAX_STEP / step)
        q = model.clamp(q + dq)
    raise NoSolutionError(f"no convergence within {max_iters} iterations")
