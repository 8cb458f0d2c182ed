"""Motion quality scores: configuration dexterity, environment clearance, and plan-level quality.

A motion earns an internal score (worst dexterity along the trajectory, in
[0, 1]), an external score (worst clearance normalized by the workspace bound,
clamped at 0 on contact), and their sum as the total.  A plan's quality is the
mean of its actions' totals, which is also the trial's length-normalized
cumulative score.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .kinematics import ArmModel, dexterity, jacobian
from .scene import EmptySceneError, WorldState, min_link_clearance, workspace_diameter_bound

if TYPE_CHECKING:
    from .executor import Trajectory


@dataclass(frozen=True)
class MotionScore:
    internal: float
    external: float
    total: float
    min_delta_sample: int
    min_clearance_sample: int


@dataclass(frozen=True)
class PlanQuality:
    per_action: tuple[float, ...]
    quality: float
    normalized_cumulative: float


def internal_score(traj: "Trajectory", arm: ArmModel) -> tuple[float, int]:
    """Smallest dexterity index along the trajectory and the sample where it occurs."""
    best = float("inf")
    best_sample = 0
    for i, (_, q) in enumerate(traj.samples):
        value = dexterity(jacobian(arm, q)).value
        if value < best:
            best = value
            best_sample = i
    return best, best_sample


def external_score(
    traj: "Trajectory",
    state: WorldState,
    arm: ArmModel,
    exclude: set[str] = frozenset(),
) -> tuple[float, int]:
    """Worst clearance along the trajectory divided by the workspace bound.

    `state` supplies the scene and any attachment active during the motion;
    exclusions must match the collision verdict's.  Penetration clamps the
    score at 0 rather than going negative.
    """
    d_bar = workspace_diameter_bound(state.scene, arm)
    worst = float("inf")
    worst_sample = 0
    for i, (_, q) in enumerate(traj.samples):
        try:
            clearance, _ = min_link_clearance(
                state.with_changes(arm_q=q), arm, exclude, include_attached=False
            )
        except EmptySceneError:
            # Nothing to clear against: the motion is maximally safe.
            clearance = d_bar
        if clearance < worst:
            worst = clearance
            worst_sample = i
    return min(max(worst, 0.0) / d_bar, 1.0), worst_sample


def total_score(
    traj: "Trajectory",
    state: WorldState,
    arm: ArmModel,
    exclude: set[str] = frozenset(),
) -> MotionScore:
    internal, delta_sample = internal_score(traj, arm)
    external, clearance_sample = external_score(traj, state, arm, exclude)
    return MotionScore(
        internal=internal,
        external=external,
        total=internal + external,
        min_delta_sample=delta_sample,
        min_clearance_sample=clearance_sample,
    )


def plan_quality(scores: Sequence[MotionScore | float]) -> PlanQuality:
    """Mean total score over a plan's actions; equals the length-normalized sum."""
    if not scores:
        raise ValueError("plan quality needs at least one motion score")
    totals = tuple(s.total if isinstance(s, MotionScore) else float(s) for s in scores)
    mean = sum(totals) / len(totals)
    return PlanQuality(per_action=totals, quality=mean, normalized_cumulative=mean)


# --------------------------------------------------------------------------
# Score-curve CSV
# --------------------------------------------------------------------------

SCORE_CSV_HEADER = ("run", "trial", "kind", "action_index", "m_i", "m_e", "m_t", "q_norm")


@dataclass(frozen=True)
class ScoreRow:
    run: int
    trial: int
    kind: str  # P0 for a fresh plan, R1.. for its retunes, P1.. after replans
    action_index: int
    m_i: float | None
    m_e: float | None
    m_t: float
    q_norm: float

    def as_record(self) -> list:
        fmt = lambda v: "" if v is None else repr(float(v))
        return [
            self.run,
            self.trial,
            self.kind,
            self.action_index,
            fmt(self.m_i),
            fmt(self.m_e),
            repr(float(self.m_t)),
            repr(float(self.q_norm)),
        ]


def write_score_rows(path: str | Path, rows: Iterable[ScoreRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(SCORE_CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_record())


def read_score_rows(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))
