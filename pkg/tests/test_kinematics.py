from __future__ import annotations

import numpy as np
import pytest

from plantune.geometry import Pose, matrix_from_quat, orientation_angle, rotation_log
from plantune.kinematics import (
    DegenerateJacobianError,
    NoSolutionError,
    dexterity,
    forward_kinematics,
    jacobian,
    link_transforms,
    load_arm_model,
    solve_ik,
)
from plantune.paths import bundled_arm_model


@pytest.fixture(scope="module")
def arm():
    return load_arm_model(bundled_arm_model())


def random_configs(arm, count: int, seed: int = 7) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = arm.lower_limits, arm.upper_limits
    return lo + rng.random((count, 7)) * (hi - lo)


class TestForwardKinematics:
    def test_zero_config_matches_hand_composed_transforms(self, arm):
        # Independent composition from elementary rotations/translations.
        def rot_x(angle):
            t = np.eye(4)
            c, s = np.cos(angle), np.sin(angle)
            t[1:3, 1:3] = [[c, -s], [s, c]]
            return t

        def trans(x, y, z):
            t = np.eye(4)
            t[:3, 3] = [x, y, z]
            return t

        expected = np.eye(4)
        for joint in arm.joints:
            expected = expected @ rot_x(joint.alpha) @ trans(joint.a, 0, 0) @ trans(0, 0, joint.d)
        expected_tool = expected.copy()
        expected_tool[:3, 3] += expected[:3, 2] * arm.tool_offset

        ee, links = forward_kinematics(arm, np.zeros(7))
        assert np.allclose(ee.matrix(), expected_tool, atol=1e-12)
        assert np.allclose(links[-1].matrix(), expected, atol=1e-12)

    def test_last_joint_spins_about_tool_point(self, arm):
        q = np.array(arm.home)
        ee0, _ = forward_kinematics(arm, q)
        q2 = q.copy()
        q2[6] += 0.4
        ee1, _ = forward_kinematics(arm, q2)
        assert np.allclose(ee0.position, ee1.position, atol=1e-12)
        assert orientation_angle(ee0.quaternion, ee1.quaternion) == pytest.approx(0.4, abs=1e-9)

    def test_revolute_periodicity(self, arm):
        q = np.array(arm.home)
        q2 = q.copy()
        q2[0] += 2 * np.pi
        ee0, _ = forward_kinematics(arm, q)
        ee1, _ = forward_kinematics(arm, q2)
        assert ee0.is_close(ee1, pos_tol=1e-9, rot_tol=1e-9)

    def test_deterministic(self, arm):
        q = random_configs(arm, 1)[0]
        a, _ = forward_kinematics(arm, q)
        b, _ = forward_kinematics(arm, q)
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.quaternion, b.quaternion)


class TestJacobian:
    def test_shape(self, arm):
        assert jacobian(arm, np.zeros(7)).shape == (6, 7)

    def test_matches_central_finite_differences(self, arm):
        eps = 1e-7
        worst = 0.0
        for q in random_configs(arm, 100, seed=11):
            J = jacobian(arm, q)
            fd = np.zeros((6, 7))
            for i in range(7):
                dq = np.zeros(7)
                dq[i] = eps
                plus = link_transforms(arm, q + dq)[-1]
                minus = link_transforms(arm, q - dq)[-1]
                fd[:3, i] = (plus[:3, 3] - minus[:3, 3]) / (2 * eps)
                fd[3:, i] = rotation_log(plus[:3, :3] @ minus[:3, :3].T) / (2 * eps)
            worst = max(worst, float(np.max(np.abs(J - fd))))
        assert worst < 1e-5

    def test_stretched_configuration_is_rank_deficient(self, arm):
        sigma = np.linalg.svd(jacobian(arm, np.zeros(7)), compute_uv=False)
        rank = int(np.sum(sigma > 1e-9 * sigma[0]))
        assert rank < 6


class TestDexterity:
    def test_isotropic_identity_block(self):
        J = np.hstack([np.eye(6), np.zeros((6, 1))])
        result = dexterity(J)
        assert result.value == pytest.approx(1.0, abs=1e-12)
        assert not result.singular

    def test_constructed_singular_values(self):
        rng = np.random.default_rng(3)
        U, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        V, _ = np.linalg.qr(rng.normal(size=(7, 7)))
        sigma = np.zeros((6, 7))
        np.fill_diagonal(sigma, [2.0, 1.0, 1.0, 1.0, 1.0, 0.5])
        J = U @ sigma @ V.T
        assert dexterity(J).value == pytest.approx(0.25, abs=1e-9)

    def test_matches_eigenvalue_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            J = rng.normal(size=(6, 7))
            eigs = np.linalg.eigvalsh(J @ J.T)
            expected = np.sqrt(max(eigs[0], 0.0)) / np.sqrt(eigs[-1])
            assert dexterity(J).value == pytest.approx(expected, abs=1e-9)

    def test_scale_invariance(self):
        rng = np.random.default_rng(23)
        J = rng.normal(size=(6, 7))
        base = dexterity(J).value
        for scale in (1e-6, 0.5, 3.0, 1e6):
            assert abs(dexterity(scale * J).value - base) < 1e-12

    def test_rank_deficient_reports_zero_with_flag(self):
        J = np.zeros((6, 7))
        J[0, 0] = 1.0
        result = dexterity(J)
        assert result.value == 0.0
        assert result.singular

    def test_all_zero_is_degenerate(self):
        with pytest.raises(DegenerateJacobianError):
            dexterity(np.zeros((6, 7)))


class TestSolveIk:
    def test_fixed_point(self, arm):
        q0 = np.array(arm.home)
        target, _ = forward_kinematics(arm, q0)
        result = solve_ik(arm, target, q0)
        assert np.allclose(result, q0, atol=1e-9)

    def test_converges_from_perturbed_seed(self, arm):
        rng = np.random.default_rng(5)
        q0 = np.array(arm.home)
        target, _ = forward_kinematics(arm, q0)
        for _ in range(5):
            seed = q0 + rng.normal(scale=0.15, size=7)
            result = solve_ik(arm, target, seed, pos_tol=1e-3, rot_tol=1e-2)
            reached, _ = forward_kinematics(arm, result)
            assert np.linalg.norm(reached.position - target.position) <= 1e-3
            assert orientation_angle(reached.quaternion, target.quaternion) <= 2e-2

    def test_result_within_limits(self, arm):
        q0 = np.array(arm.home)
        target, _ = forward_kinematics(arm, q0)
        result = solve_ik(arm, target, q0 + 0.1)
        assert np.all(result >= arm.lower_limits - 1e-12)
        assert np.all(result <= arm.upper_limits + 1e-12)

    def test_unreachable_target(self, arm):
        target = Pose(np.array([arm.max_reach + 0.5, 0.0, 0.0]))
        with pytest.raises(NoSolutionError):
            solve_ik(arm, target, np.array(arm.home))

    def test_bad_tolerance(self, arm):
        target, _ = forward_kinematics(arm, np.array(arm.home))
        with pytest.raises(ValueError):
            solve_ik(arm, target, np.array(arm.home), pos_tol=0.0)
