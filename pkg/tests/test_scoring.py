from __future__ import annotations

import math

import numpy as np
import pytest

from plantune.executor import ExecutorConfig, Trajectory, execute_action
from plantune.geometry import Pose
from plantune.kinematics import dexterity, jacobian, load_arm_model
from plantune.paths import bundled_arm_model, bundled_scene
from plantune.plans import Action
from plantune.scene import (
    Scene,
    SceneObject,
    ShapePrimitive,
    collision_bodies,
    initial_state,
    load_scene,
    workspace_diameter_bound,
)
from plantune.scoring import (
    MotionScore,
    ScoreRow,
    external_score,
    internal_score,
    plan_quality,
    read_score_rows,
    total_score,
    write_score_rows,
)


@pytest.fixture(scope="module")
def arm():
    return load_arm_model(bundled_arm_model())


@pytest.fixture(scope="module")
def table_scene():
    return load_scene(bundled_scene("table_clearing"))


@pytest.fixture(scope="module")
def approach_outcome(arm):
    scene = load_scene(bundled_scene("two_objects"))
    state = initial_state(scene, arm)
    action = Action(0, "approach", ("half-eaten apple", 0.5, 0.01, "side"))
    return state, execute_action(state, arm, action, ExecutorConfig())


def _static_trajectory(q, samples=3) -> Trajectory:
    return Trajectory(tuple((i * 0.01, q.copy()) for i in range(samples)), 0.01)


class TestInternalScore:
    def test_constant_trajectory_scores_its_dexterity(self, arm, table_scene):
        state = initial_state(table_scene, arm)
        value, argmin = internal_score(_static_trajectory(state.arm_q), arm)
        assert value == pytest.approx(dexterity(jacobian(arm, state.arm_q)).value, abs=1e-15)
        assert argmin == 0

    def test_matches_per_sample_oracle(self, arm, approach_outcome):
        _, outcome = approach_outcome
        value, argmin = internal_score(outcome.trajectory, arm)
        per_sample = [dexterity(jacobian(arm, q)).value for _, q in outcome.trajectory.samples]
        assert value == pytest.approx(min(per_sample), abs=1e-15)
        assert argmin == int(np.argmin(per_sample))

    def test_concatenation_takes_min_of_parts(self, arm, approach_outcome):
        _, outcome = approach_outcome
        samples = outcome.trajectory.samples
        half = len(samples) // 2
        first = Trajectory(samples[:half], 0.01)
        second = Trajectory(samples[half:], 0.01)
        whole_value, _ = internal_score(outcome.trajectory, arm)
        assert whole_value == pytest.approx(
            min(internal_score(first, arm)[0], internal_score(second, arm)[0]), abs=1e-15
        )

    def test_near_singularity_dips_below_endpoints(self, arm, table_scene):
        state = initial_state(table_scene, arm)
        q_stretch = np.zeros(7)
        q_a = np.array(arm.home)
        path = tuple(
            (i * 0.01, q_a + (q_stretch - q_a) * i / 19.0) for i in range(20)
        ) + tuple((0.2 + i * 0.01, q_stretch + (q_a - q_stretch) * i / 19.0) for i in range(20))
        traj = Trajectory(path, 0.01)
        value, _ = internal_score(traj, arm)
        endpoints = dexterity(jacobian(arm, q_a)).value
        assert value < endpoints


class TestExternalScore:
    def test_ratio_of_worst_clearance(self, arm, table_scene):
        from plantune.scene import min_link_clearance

        state = initial_state(table_scene, arm)
        d_bar = workspace_diameter_bound(table_scene, arm)
        clearance, _ = min_link_clearance(state, arm, include_attached=False)
        value, argmin = external_score(_static_trajectory(state.arm_q), state, arm)
        assert value == pytest.approx(max(clearance, 0.0) / d_bar, abs=1e-15)
        assert argmin == 0

    def test_collision_clamps_to_zero(self, arm):
        # Arm home posture with a ball embedded in the forearm: clearance < 0.
        ball = SceneObject("embedded ball", ShapePrimitive("sphere", (0.2,)), Pose(np.array([0.0, 0.0, 0.8])))
        scene = Scene(
            objects=(ball,),
            locations=(),
            workspace_min=np.array([-2.0, -2.0, -2.0]),
            workspace_max=np.array([2.0, 2.0, 2.0]),
            robot_base=Pose(np.zeros(3)),
        )
        state = initial_state(scene, arm)
        value, _ = external_score(_static_trajectory(np.zeros(7)), state, arm)
        assert value == 0.0

    def test_matches_brute_force_on_random_states(self, arm, table_scene):
        rng = np.random.default_rng(41)
        state = initial_state(table_scene, arm)
        d_bar = workspace_diameter_bound(table_scene, arm)
        lo, hi = arm.lower_limits, arm.upper_limits
        for _ in range(25):
            qs = [lo + rng.random(7) * (hi - lo) for _ in range(4)]
            traj = Trajectory(tuple((i * 0.01, q) for i, q in enumerate(qs)), 0.01)
            exclude = {"white table"} if rng.random() < 0.5 else set()
            value, argmin = external_score(traj, state, arm, exclude)
            worst, worst_i = math.inf, 0
            for i, q in enumerate(qs):
                probe = state.with_changes(arm_q=q)
                best = math.inf
                for entity in probe.scene.entities:
                    if entity.label in exclude:
                        continue
                    pose = probe.pose_of(entity.label)
                    for center, radius in collision_bodies(probe, arm, include_attached=False):
                        d = entity.shape.sdf_local(pose.inverse_transform_point(center)) - radius
                        best = min(best, d)
                if best < worst:
                    worst, worst_i = best, i
            assert value == pytest.approx(max(worst, 0.0) / d_bar, abs=1e-12)
            assert argmin == worst_i


class TestTotalScore:
    def test_sum_identity(self, arm, approach_outcome):
        state, outcome = approach_outcome
        score = total_score(outcome.trajectory, state, arm, frozenset({"half-eaten apple"}))
        assert score.total == pytest.approx(score.internal + score.external, abs=1e-15)
        assert 0.0 <= score.internal <= 1.0
        assert 0.0 <= score.external <= 1.0
        assert 0.0 <= score.total <= 2.0

    def test_collision_case_reduces_to_internal(self, arm):
        ball = SceneObject("embedded ball", ShapePrimitive("sphere", (0.2,)), Pose(np.array([0.0, 0.0, 0.8])))
        scene = Scene(
            objects=(ball,),
            locations=(),
            workspace_min=np.array([-2.0, -2.0, -2.0]),
            workspace_max=np.array([2.0, 2.0, 2.0]),
            robot_base=Pose(np.zeros(3)),
        )
        state = initial_state(scene, arm)
        traj = _static_trajectory(np.array(arm.home))
        score = total_score(traj, state, arm)
        assert score.external == 0.0
        assert score.total == pytest.approx(score.internal, abs=1e-15)


class TestPlanQuality:
    def test_mean(self):
        quality = plan_quality([0.4, 0.6])
        assert quality.quality == pytest.approx(0.5, abs=1e-15)
        assert quality.normalized_cumulative == pytest.approx(0.5, abs=1e-15)

    def test_single_action(self):
        score = MotionScore(0.3, 0.1, 0.4, 0, 0)
        quality = plan_quality([score])
        assert quality.quality == pytest.approx(0.4, abs=1e-15)

    def test_permutation_invariance(self):
        values = [0.11, 0.42, 0.07, 0.9]
        assert plan_quality(values).quality == pytest.approx(
            plan_quality(list(reversed(values))).quality, abs=1e-15
        )

    def test_normalized_equals_mean_identity(self):
        values = [0.123456789, 0.987654321, 0.5]
        quality = plan_quality(values)
        assert quality.normalized_cumulative == pytest.approx(sum(values) / 3, abs=1e-12)
        assert quality.normalized_cumulative == quality.quality

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            plan_quality([])


class TestDiscretizationStability:
    def test_halving_dt_changes_scores_under_five_percent(self, arm):
        scene = load_scene(bundled_scene("two_objects"))
        state = initial_state(scene, arm)
        action = Action(0, "approach", ("half-eaten apple", 0.5, 0.01, "side"))
        coarse = execute_action(state, arm, action, ExecutorConfig(dt=0.01)).motion_score
        fine = execute_action(state, arm, action, ExecutorConfig(dt=0.005)).motion_score
        assert abs(fine.internal - coarse.internal) / coarse.internal < 0.05
        assert abs(fine.external - coarse.external) / coarse.external < 0.05


class TestScoreCsv:
    def test_round_trip(self, tmp_path):
        rows = [
            ScoreRow(run=0, trial=1, kind="P0", action_index=0, m_i=0.1, m_e=0.02, m_t=0.12, q_norm=0.12),
            ScoreRow(run=0, trial=2, kind="R1", action_index=2, m_i=None, m_e=None,
                     m_t=0.015802350054063646, q_norm=0.015802350054063646),
        ]
        path = tmp_path / "scores.csv"
        write_score_rows(path, rows)
        parsed = read_score_rows(path)
        assert parsed[0]["kind"] == "P0"
        assert parsed[1]["m_i"] == ""
        assert float(parsed[1]["m_t"]) == 0.015802350054063646
