"""The seven predicate checks that verify action outcomes, and entry evaluation.

Boundary behavior is strict everywhere: a gripper exactly at the clearance
distance cannot grasp, an object exactly 10 cm away is not at the location,
and a motion score of exactly zero is unhealthy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import math

import numpy as np

from .kinematics import ArmModel, NoSolutionError, link_transforms, solve_ik
from .plans import EvalEntry
from .scene import (
    GRASP_STANDOFF,
    WorldState,
    grasp_goal_pose,
    grasp_offset_point,
    primitive_pair_distance,
)

if TYPE_CHECKING:
    from .executor import ActionOutcome

AT_LOCATION_THRESHOLD = 0.10  # meters
_REACH_POS_TOL = 2e-3
_REACH_ROT_TOL = 2e-2


class ArityError(TypeError):
    """Stored check arguments do not match the check's signature."""


@dataclass(frozen=True)
class CheckResult:
    name: str
    args: tuple
    observed: bool | str
    expected: bool | str
    passed: bool


@dataclass(frozen=True)
class EntryVerdict:
    action_index: int
    results: tuple[CheckResult, ...]

    @property
    def success(self) -> bool:
        return all(r.passed for r in self.results)


def can_grasp(
    state: WorldState,
    arm: ArmModel,
    target: str,
    grasp: str,
    clearance_param: float,
    margin: float = GRASP_STANDOFF,
) -> bool:
    """True if the tool point sits within clearance_param of the grasp offset point.

    The reference point is the canonical standoff position for the requested
    grasp direction, so the check passes exactly when the gripper has arrived
    where a grasp from that side begins.
    """
    state.scene.entity(target)  # raises InvalidTargetError
    tool = _tool_position(state, arm)
    reference = grasp_offset_point(state, target, grasp, margin)
    return float(np.linalg.norm(reference - tool)) < clearance_param


def holding(state: WorldState) -> bool:
    """True when the gripper registers at least two contact points."""
    return state.gripper.contact_count >= 2


def at_location(state: WorldState, obj: str, loc: str) -> bool:
    """True if the minimum distance between the two bodies is under 10 cm.

    A spilled container still counts as at its location; spillage is tracked
    separately on the world state.
    """
    a = state.scene.entity(obj)
    b = state.scene.entity(loc)
    distance = primitive_pair_distance(a, state.pose_of(obj), b, state.pose_of(loc))
    return distance < AT_LOCATION_THRESHOLD


def can_reach(state: WorldState, arm: ArmModel, goal: str, grasp: str) -> bool:
    """True if IK finds a grasp-offset configuration for the goal from the current state.

    Goals outside the workspace box always return False.
    """
    entity = state.scene.entity(goal)
    position = state.pose_of(entity.label).position
    if not state.scene.contains_point(position):
        return False
    target = grasp_goal_pose(state, goal, grasp, margin=GRASP_STANDOFF)
    target_in_base = state.scene.robot_base.inverse().compose(target)
    try:
        solve_ik(arm, target_in_base, state.arm_q, pos_tol=_REACH_POS_TOL, rot_tol=_REACH_ROT_TOL,
                 orientation="axis")
    except NoSolutionError:
        return False
    return True


def collision_free(outcome: "ActionOutcome") -> str:
    """Label of the first body hit during the action, or the empty string."""
    return outcome.collision or ""


def timeout(outcome: "ActionOutcome") -> bool:
    """True when the action finished in time (the expected value on success)."""
    return not outcome.timed_out


def check_motion_health(outcome: "ActionOutcome") -> bool:
    """True when the total motion score is finite and strictly positive."""
    total = outcome.motion_score.total
    return bool(math.isfinite(total) and total > 0.0)


def _tool_position(state: WorldState, arm: ArmModel) -> np.ndarray:
    frames = link_transforms(arm, state.arm_q)
    tool = state.scene.robot_base.matrix() @ frames[-1]
    return tool[:3, 3]


def evaluate_entry(
    entry: EvalEntry,
    state: WorldState,
    outcome: "ActionOutcome",
    arm: ArmModel,
) -> EntryVerdict:
    """Run the entry's checks in insertion order against the post-action state."""
    if len(entry.expected) != len(entry.checks):
        raise ArityError(
            f"entry {entry.action_index}: {len(entry.checks)} checks but "
            f"{len(entry.expected)} expected outputs"
        )
    results = []
    for (name, args), expected in zip(entry.checks, entry.expected):
        observed = _run_check(name, args, state, outcome, arm)
        results.append(
            CheckResult(name=name, args=args, observed=observed, expected=expected,
                        passed=observed == expected)
        )
    return EntryVerdict(action_index=entry.action_index, results=tuple(results))


def _run_check(name, args, state, outcome, arm):
    if name == "can_grasp":
        _need(name, args, 2)
        return can_grasp(state, arm, args[0], args[1],
                         clearance_param=float(outcome.action.obstacle_clearance))
    if name == "holding":
        _need(name, args, 0)
        return holding(state)
    if name == "at_location":
        _need(name, args, 2)
        return at_location(state, args[0], args[1])
    if name == "can_reach":
        _need(name, args, 2)
        return can_reach(state, arm, args[0], args[1])
    if name == "collision_free":
        _need(name, args, 0)
        return collision_free(outcome)
    if name == "timeout":
        _need(name, args, 0)
        return timeout(outcome)
    if name == "check_motion_health":
        _need(name, args, 0)
        return check_motion_health(outcome)
    raise ArityError(f"unknown check {name!r}")


def _need(name: str, args: tuple, count: int) -> None:
    if not isinstance(args, tuple) or len(args) != count:
        raise ArityError(f"{name} takes {count} arguments, got {args!r}")
