"""Simulated execution of single actions and whole plans.

Motions are generated by a joint-space linear dynamical system pulling toward
an IK goal, with per-step velocity clamps and a clearance-based modulation that
zeroes the velocity component closing on any body nearer than the action's
obstacle_clearance (tangential motion is preserved).  Grasping is kinematic:
success is gated on the grasp direction the object affords and on ending within
grasp range, so parameter retuning has a physical reason to change outcomes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Pose, matrix_from_quat
from .kinematics import ArmModel, NoSolutionError, dexterity, jacobian, link_transforms, solve_ik
from .plans import Action, EvaluationPlan, TaskPlan
from .scene import (
    EmptySceneError,
    GRASP_STANDOFF,
    GripperState,
    InvalidTargetError,
    SceneObject,
    WorldState,
    grasp_direction,
    grasp_goal_pose,
    min_link_clearance,
    support_top,
)
from .scoring import MotionScore, total_score


class NotHoldingError(RuntimeError):
    """place/drop issued with nothing attached."""


class AlreadyHoldingError(RuntimeError):
    """pick issued while another object is attached."""


@dataclass(frozen=True)
class Trajectory:
    samples: tuple[tuple[float, np.ndarray], ...]
    dt: float

    def __post_init__(self) -> None:
        assert len(self.samples) >= 2, "trajectories carry at least two samples"

    @property
    def duration(self) -> float:
        return self.samples[-1][0]


@dataclass(frozen=True)
class ActionOutcome:
    action: Action
    trajectory: Trajectory
    collision: str | None
    timed_out: bool
    motion_score: MotionScore
    end_state: WorldState

    @property
    def excluded_labels(self) -> frozenset[str]:
        """Labels exempt from this action's collision/clearance accounting."""
        exclude = set()
        if self.action.name in ("approach", "pick"):
            exclude.add(self.action.target)
        return frozenset(exclude)


@dataclass(frozen=True)
class ExecutorConfig:
    dt: float = 0.01
    timeout_limit: float = 30.0  # simulated seconds
    max_joint_speed: float = 1.5  # rad/s at speed = 1
    max_tool_speed: float = 2.0  # m/s at speed = 1; also bounds per-step displacement
    gain_max: float = 3.0  # DS gain at speed = 1, 1/s
    goal_tol: float = 0.002  # rad, per-joint convergence threshold
    ik_pos_tol: float = 2e-3
    ik_rot_tol: float = 2e-2
    approach_standoff: float = GRASP_STANDOFF
    drop_hover: float = 0.15
    spill_model: bool = True

    def __post_init__(self) -> None:
        for name in ("dt", "timeout_limit", "max_joint_speed", "max_tool_speed",
                     "gain_max", "goal_tol", "ik_pos_tol", "ik_rot_tol", "drop_hover"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


_MODULATION_DAMPING = 1e-4


def execute_action(
    state: WorldState,
    arm: ArmModel,
    action: Action,
    cfg: ExecutorConfig = ExecutorConfig(),
) -> ActionOutcome:
    """Run one action from `state` and return its outcome (input state untouched)."""
    scene = state.scene
    target = scene.entity(action.target)  # raises InvalidTargetError
    if action.name == "pick" and state.gripper.attached is not None:
        raise AlreadyHoldingError(f"pick({action.target!r}) while holding {state.gripper.attached!r}")
    if action.name in ("place", "drop") and state.gripper.attached is None:
        raise NotHoldingError(f"{action.name}({action.target!r}) with empty gripper")

    goal_pose = _goal_pose(state, arm, action, target, cfg)
    exclude = set()
    if action.name in ("approach", "pick"):
        exclude.add(action.target)

    q_goal: np.ndarray | None = None
    if goal_pose is not None:
        q_goal = _solve_goal_config(state, arm, goal_pose, exclude, cfg)

    traj, collision, reached, max_tilt = _integrate(state, arm, action, q_goal, exclude, cfg)
    end_state = _apply_effects(state, arm, action, target, traj, reached, max_tilt, cfg)
    score = total_score(traj, state, arm, frozenset(exclude))
    return ActionOutcome(
        action=action,
        trajectory=traj,
        collision=collision,
        timed_out=not reached,
        motion_score=score,
        end_state=end_state,
    )


def _goal_pose(
    state: WorldState,
    arm: ArmModel,
    action: Action,
    target: SceneObject,
    cfg: ExecutorConfig,
) -> Pose | None:
    if action.name == "approach":
        return grasp_goal_pose(state, action.target, action.grasp, margin=cfg.approach_standoff)
    if action.name == "pick":
        return grasp_goal_pose(state, action.target, action.grasp, margin=0.0)

    # place/drop: translate the tool so the carried object arrives over the
    # location; orientation is held, which keeps the IK goal benign.
    attached = state.gripper.attached
    assert attached is not None
    carried = state.scene.entity(attached)
    top = support_top(target, state.pose_of(target.label))
    tool_world = _tool_pose(state, arm)
    carried_pose = state.pose_of(attached)
    carry_offset = tool_world.position - carried_pose.position
    if action.name == "place":
        object_z = top + carried.shape.half_height
    else:
        # Hover so the carried object's bottom sits drop_hover above the rim.
        object_z = top + cfg.drop_hover + carried.shape.half_height
    object_goal = np.array([target.pose.position[0], target.pose.position[1], object_z])
    return Pose(object_goal + carry_offset, tool_world.quaternion)


def _tool_pose(state: WorldState, arm: ArmModel) -> Pose:
    frames = link_transforms(arm, state.arm_q)
    return Pose.from_matrix(state.scene.robot_base.matrix() @ frames[-1])


def _solve_goal_config(
    state: WorldState,
    arm: ArmModel,
    goal_world: Pose,
    exclude: set[str],
    cfg: ExecutorConfig,
) -> np.ndarray | None:
    """IK for the goal pose, preferring a posture clear of the scene.

    Seeds are tried in a fixed order (current config, home turned toward the
    goal, home); the first solution whose static clearance is positive wins,
    which keeps goal postures from penetrating the table or clutter.
    """
    goal = state.scene.robot_base.inverse().compose(goal_world)
    home = np.asarray(arm.home, dtype=float)
    facing = home.copy()
    bearing = math.atan2(goal.position[1], goal.position[0])
    facing[0] = float(np.clip(bearing, arm.lower_limits[0], arm.upper_limits[0]))
    fallback: np.ndarray | None = None
    for seed in (state.arm_q.copy(), facing, home):
        try:
            q = solve_ik(arm, goal, seed, pos_tol=cfg.ik_pos_tol, rot_tol=cfg.ik_rot_tol,
                         orientation="axis")
        except NoSolutionError:
            continue
        try:
            clearance, _ = min_link_clearance(state.with_changes(arm_q=q), arm, exclude)
        except EmptySceneError:
            return q
        if clearance > 2e-3:
            return q
        if fallback is None:
            fallback = q
    return fallback


def _integrate(
    state: WorldState,
    arm: ArmModel,
    action: Action,
    q_goal: np.ndarray | None,
    exclude: set[str],
    cfg: ExecutorConfig,
) -> tuple[Trajectory, str | None, bool, float]:
    """Euler-integrate the DS; returns (trajectory, first collision, reached, max carried tilt)."""
    scene = state.scene
    base = scene.robot_base.matrix()
    speed = max(float(action.speed), 1e-6)
    gain = speed * cfg.gain_max
    joint_cap = speed * cfg.max_joint_speed
    tool_cap = speed * cfg.max_tool_speed
    band = float(action.obstacle_clearance)

    watched = set(exclude)
    if state.gripper.attached is not None:
        watched.add(state.gripper.attached)
    obstacles = [
        _StaticObstacle.from_entity(e, state.pose_of(e.label))
        for e in sorted(scene.entities, key=lambda e: e.label)
        if e.label not in watched
    ]

    grab = state.gripper.grab_transform
    grab_matrix = grab.matrix() if grab is not None else None
    grab_rot = matrix_from_quat(grab.quaternion) if grab is not None else None
    carried_spheres: tuple = ()
    if state.gripper.attached is not None:
        carried_spheres = scene.entity(state.gripper.attached).shape.collision_spheres()

    q = state.arm_q.copy()
    samples: list[tuple[float, np.ndarray]] = [(0.0, q.copy())]
    collision: str | None = None
    reached = False
    max_tilt = 0.0
    max_steps = max(1, int(round(cfg.timeout_limit / cfg.dt)))
    frames = link_transforms(arm, q)
    bodies, joint_counts = _bodies_from_frames(arm, frames, base, grab_matrix, carried_spheres)

    for step in range(1, max_steps + 1):
        if q_goal is not None and float(np.max(np.abs(q - q_goal))) < cfg.goal_tol:
            reached = True
            break
        if q_goal is None:
            break

        velocity = -gain * (q - q_goal)
        peak = float(np.max(np.abs(velocity)))
        if peak > joint_cap:
            velocity *= joint_cap / peak
        J = _jacobian_from_frames(frames, base)
        tool_speed = float(np.linalg.norm(J[:3] @ velocity))
        if tool_speed > tool_cap:
            velocity *= tool_cap / tool_speed

        for pair in _pairs_within_band(bodies, obstacles, band):
            velocity = _modulate(velocity, frames, base, joint_counts, pair, band)

        q = arm.clamp(q + velocity * cfg.dt)
        t = step * cfg.dt
        samples.append((t, q.copy()))

        frames = link_transforms(arm, q)
        bodies, joint_counts = _bodies_from_frames(arm, frames, base, grab_matrix, carried_spheres)
        hit = _first_penetration(bodies, obstacles)
        if hit is not None and collision is None:
            collision = hit
        if grab_rot is not None:
            tool = base @ frames[-1]
            obj_z = (tool[:3, :3] @ grab_rot)[:, 2]
            tilt = math.acos(min(1.0, max(-1.0, float(obj_z[2]))))
            max_tilt = max(max_tilt, tilt)

    if len(samples) < 2:
        samples.append((cfg.dt, q.copy()))
    return Trajectory(tuple(samples), cfg.dt), collision, reached, max_tilt


@dataclass(frozen=True)
class _StaticObstacle:
    """Obstacle with its inverse transform cached for the integration loop."""

    label: str
    shape: object
    rotation: np.ndarray  # world-from-local rotation
    position: np.ndarray

    @classmethod
    def from_entity(cls, entity: SceneObject, pose: Pose) -> "_StaticObstacle":
        return cls(entity.label, entity.shape, matrix_from_quat(pose.quaternion), pose.position)

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (points - self.position) @ self.rotation

    def sdf_world(self, point: np.ndarray) -> float:
        return self.shape.sdf_local(self.rotation.T @ (point - self.position))


@dataclass(frozen=True)
class _NearestPair:
    clearance: float
    body_index: int
    body_center: np.ndarray
    obstacle: _StaticObstacle


def _bodies_from_frames(arm, frames, base, grab_matrix, carried_spheres):
    bodies: list[tuple[np.ndarray, float]] = []
    joint_counts: list[int] = []  # how many joints move each body point
    for i, joint in enumerate(arm.joints):
        world = base @ frames[i]
        for sphere in joint.spheres:
            bodies.append((world[:3, :3] @ np.asarray(sphere.center) + world[:3, 3], sphere.radius))
            joint_counts.append(i + 1)
    tool = base @ frames[-1]
    for sphere in arm.gripper_spheres:
        bodies.append((tool[:3, :3] @ np.asarray(sphere.center) + tool[:3, 3], sphere.radius))
        joint_counts.append(7)
    if grab_matrix is not None:
        carried = tool @ grab_matrix
        for local, radius in carried_spheres:
            bodies.append((carried[:3, :3] @ local + carried[:3, 3], radius))
            joint_counts.append(7)
    return bodies, joint_counts


def _pairs_within_band(bodies, obstacles, band) -> list[_NearestPair]:
    """Per obstacle, the nearest robot body, kept if inside the avoidance band."""
    pairs: list[_NearestPair] = []
    centers = np.asarray([c for c, _ in bodies])
    radii = np.asarray([r for _, r in bodies])
    for obstacle in obstacles:
        distances = obstacle.shape.sdf_local_many(obstacle.to_local(centers)) - radii
        idx = int(np.argmin(distances))
        d = float(distances[idx])
        if d < band:
            pairs.append(_NearestPair(d, idx, centers[idx], obstacle))
    pairs.sort(key=lambda p: p.clearance)
    return pairs


def _first_penetration(bodies, obstacles) -> str | None:
    worst = 0.0
    label = None
    centers = np.asarray([c for c, _ in bodies])
    radii = np.asarray([r for _, r in bodies])
    for obstacle in obstacles:
        distances = obstacle.shape.sdf_local_many(obstacle.to_local(centers)) - radii
        d = float(np.min(distances))
        if d < worst:
            worst = d
            label = obstacle.label
    return label


def _jacobian_from_frames(frames, base) -> np.ndarray:
    rot = base[:3, :3]
    p_ee = rot @ frames[-1][:3, 3] + base[:3, 3]
    J = np.zeros((6, 7))
    for i in range(7):
        z = rot @ frames[i][:3, 2]
        d = p_ee - (rot @ frames[i][:3, 3] + base[:3, 3])
        J[0, i] = z[1] * d[2] - z[2] * d[1]
        J[1, i] = z[2] * d[0] - z[0] * d[2]
        J[2, i] = z[0] * d[1] - z[1] * d[0]
        J[3:, i] = z
    return J


def _point_jacobian(frames, base, point: np.ndarray, joint_count: int) -> np.ndarray:
    rot = base[:3, :3]
    J = np.zeros((3, 7))
    for i in range(joint_count):
        z = rot @ frames[i][:3, 2]
        d = point - (rot @ frames[i][:3, 3] + base[:3, 3])
        J[0, i] = z[1] * d[2] - z[2] * d[1]
        J[1, i] = z[2] * d[0] - z[0] * d[2]
        J[2, i] = z[0] * d[1] - z[1] * d[0]
    return J


def _modulate(velocity, frames, base, joint_counts, pair: _NearestPair, band: float):
    """Damp the body point's velocity component toward the obstacle.

    The closing component is scaled by clearance/band: untouched at the band
    edge, fully zeroed at contact.  Tangential motion is preserved, so goals
    that sit inside the band remain reachable (just slower), while penetration
    can only come from discrete-step overshoot at high commanded speeds.
    """
    eps = 1e-6
    center = pair.body_center
    grad = np.zeros(3)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = eps
        grad[axis] = (
            pair.obstacle.sdf_world(center + step) - pair.obstacle.sdf_world(center - step)
        ) / (2 * eps)
    norm = float(np.linalg.norm(grad))
    if norm < 1e-9:
        return velocity
    away = grad / norm
    J_pt = _point_jacobian(frames, base, center, joint_counts[pair.body_index])
    v_pt = J_pt @ velocity
    closing = -float(np.dot(v_pt, away))
    if closing <= 0.0:
        return velocity
    keep = min(max(pair.clearance, 0.0) / band, 1.0)
    correction = (1.0 - keep) * closing * away  # cancel the damped share of the approach
    JJt = J_pt @ J_pt.T + _MODULATION_DAMPING * np.eye(3)
    return velocity + J_pt.T @ np.linalg.solve(JJt, correction)


def _apply_effects(
    state: WorldState,
    arm: ArmModel,
    action: Action,
    target: SceneObject,
    traj: Trajectory,
    reached: bool,
    max_tilt: float,
    cfg: ExecutorConfig,
) -> WorldState:
    q_end = traj.samples[-1][1]
    end = state.with_changes(arm_q=q_end, sim_time=state.sim_time + traj.duration)
    end = end.with_changes(object_poses=dict(state.object_poses))
    tool = _tool_pose(end, arm)

    if state.gripper.attached is not None:
        # Carried object rode the tool frame for the whole motion.
        grab = state.gripper.grab_transform
        carried_pose = Pose.from_matrix(tool.matrix() @ grab.matrix())
        end.object_poses[state.gripper.attached] = carried_pose
        if cfg.spill_model:
            end = _maybe_spill(state, end, action, max_tilt)

    if action.name == "approach":
        return end

    if action.name == "pick":
        grasp_ok = action.grasp in target.graspable_from
        within = _within_grasp_range(end, arm, action, margin=0.0)
        if reached and grasp_ok and within:
            grab = Pose.from_matrix(np.linalg.inv(tool.matrix()) @ end.pose_of(action.target).matrix())
            gripper = GripperState(closed=True, contact_count=2, attached=action.target, grab_transform=grab)
        elif reached:
            gripper = GripperState(closed=True, contact_count=1)
        else:
            gripper = GripperState(closed=True, contact_count=0)
        return end.with_changes(gripper=gripper)

    # place/drop release the attachment.
    attached = state.gripper.attached
    carried = state.scene.entity(attached)
    if reached:
        top = support_top(target, end.pose_of(target.label))
        if action.name == "place":
            z = top + carried.shape.half_height
        else:
            z = top - carried.shape.half_height  # projected into the opening
        end.object_poses[attached] = Pose(
            np.array([target.pose.position[0], target.pose.position[1], z]),
            carried.pose.quaternion,
        )
    return end.with_changes(gripper=GripperState())


def _maybe_spill(state: WorldState, end: WorldState, action: Action, max_tilt: float) -> WorldState:
    label = state.gripper.attached
    carried = state.scene.entity(label)
    if carried.spill_tilt_limit is None:
        return end
    bound = math.pi / 2.0
    if action.orientation is not None:
        bound = (1.0 - float(action.orientation)) * math.pi / 2.0
    if min(max_tilt, bound) > carried.spill_tilt_limit:
        return end.with_changes(spilled=end.spilled | {label})
    return end


def _within_grasp_range(state: WorldState, arm: ArmModel, action: Action, margin: float) -> bool:
    from .checks import can_grasp

    return can_grasp(
        state, arm, action.target, action.grasp,
        clearance_param=float(action.obstacle_clearance), margin=margin,
    )


# --------------------------------------------------------------------------
# Plan execution
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FirstFailure:
    action_index: int
    failed: tuple  # failed CheckResult values, empty on executor errors
    executor_error: str | None = None


@dataclass(frozen=True)
class ExecutionReport:
    outcomes: tuple[ActionOutcome, ...]
    verdicts: tuple
    first_failure: FirstFailure | None
    final_state: WorldState

    @property
    def succeeded(self) -> bool:
        return self.first_failure is None


def run_plan(
    task_plan: TaskPlan,
    evaluation_plan: EvaluationPlan,
    state: WorldState,
    arm: ArmModel,
    cfg: ExecutorConfig = ExecutorConfig(),
) -> ExecutionReport:
    """Execute actions in order, checking each one's evaluation entry; stop at the first mismatch."""
    from .checks import evaluate_entry

    outcomes: list[ActionOutcome] = []
    verdicts: list = []
    current = state.copy()
    failure: FirstFailure | None = None
    for action in task_plan.actions:
        try:
            outcome = execute_action(current, arm, action, cfg)
        except (InvalidTargetError, NotHoldingError, AlreadyHoldingError) as exc:
            failure = FirstFailure(action.index, (), executor_error=f"executor error: {exc}")
            break
        outcomes.append(outcome)
        current = outcome.end_state
        entry = evaluation_plan.entry_for(action.index)
        if entry is None:
            failure = FirstFailure(action.index, (), executor_error="executor error: no evaluation entry")
            break
        verdict = evaluate_entry(entry, current, outcome, arm)
        verdicts.append(verdict)
        if not verdict.success:
            failure = FirstFailure(
                action.index,
                tuple(r for r in verdict.results if not r.passed),
            )
            break
    return ExecutionReport(
        outcomes=tuple(outcomes),
        verdicts=tuple(verdicts),
        first_failure=failure,
        final_state=current,
    )


# --------------------------------------------------------------------------
# Trajectory dump
# --------------------------------------------------------------------------

def dump_trajectory_csv(
    path: str | Path,
    outcome: ActionOutcome,
    pre_state: WorldState,
    arm: ArmModel,
) -> None:
    """Per-sample CSV: t, q1..q7, clearance, delta."""
    exclude = set(outcome.excluded_labels)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t"] + [f"q{i}" for i in range(1, 8)] + ["clearance", "delta"])
        for t, q in outcome.trajectory.samples:
            clearance, _ = min_link_clearance(pre_state.with_changes(arm_q=q), arm, exclude)
            delta = dexterity(jacobian(arm, q)).value
            writer.writerow([repr(t)] + [repr(float(v)) for v in q] + [repr(clearance), repr(delta)])
