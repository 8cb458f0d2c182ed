from __future__ import annotations

import math

import numpy as np
import pytest

from plantune.config import ConfigError
from plantune.geometry import Pose
from plantune.kinematics import load_arm_model
from plantune.paths import bundled_arm_model, bundled_scene
from plantune.scene import (
    EmptySceneError,
    Scene,
    SceneObject,
    ShapePrimitive,
    collision_bodies,
    initial_state,
    load_scene,
    min_link_clearance,
    primitive_pair_distance,
    signed_distance,
    workspace_diameter_bound,
)


@pytest.fixture(scope="module")
def arm():
    return load_arm_model(bundled_arm_model())


@pytest.fixture(scope="module")
def table_scene():
    return load_scene(bundled_scene("table_clearing"))


def _closest_point_distance(shape: ShapePrimitive, point: np.ndarray) -> float:
    """Independent distance oracle: explicit closest-point computation per primitive."""
    p = np.asarray(point, dtype=float)
    if shape.kind == "sphere":
        return float(np.linalg.norm(p)) - shape.dims[0]
    if shape.kind == "box":
        half = np.asarray(shape.dims) / 2.0
        clamped = np.clip(p, -half, half)
        if np.any(np.abs(p) > half):
            return float(np.linalg.norm(p - clamped))
        return float(np.max(np.abs(p) - half))
    radius, height = shape.dims
    r = math.hypot(p[0], p[1])
    dr, dz = r - radius, abs(p[2]) - height / 2.0
    if dr <= 0 and dz <= 0:
        return max(dr, dz)
    return math.hypot(max(dr, 0.0), max(dz, 0.0))


class TestSignedDistance:
    def test_sphere_center(self):
        obj = SceneObject("ball", ShapePrimitive("sphere", (0.05,)), Pose(np.zeros(3)))
        assert signed_distance(np.zeros(3), obj) == pytest.approx(-0.05, abs=1e-12)

    def test_box_face(self):
        obj = SceneObject("crate", ShapePrimitive("box", (1.0, 1.0, 1.0)), Pose(np.zeros(3)))
        assert signed_distance(np.array([0.6, 0.0, 0.0]), obj) == pytest.approx(0.10, abs=1e-12)

    @pytest.mark.parametrize(
        "shape",
        [
            ShapePrimitive("sphere", (0.07,)),
            ShapePrimitive("box", (0.2, 0.3, 0.15)),
            ShapePrimitive("cylinder", (0.05, 0.2)),
        ],
        ids=["sphere", "box", "cylinder"],
    )
    def test_matches_closest_point_oracle(self, shape):
        rng = np.random.default_rng(31)
        obj = SceneObject("thing", shape, Pose(np.array([0.1, -0.2, 0.3]), np.array([0.9, 0.1, 0.3, 0.2])))
        for _ in range(300):
            point = rng.uniform(-0.6, 0.6, size=3)
            local = obj.pose.inverse_transform_point(point)
            assert signed_distance(point, obj) == pytest.approx(
                _closest_point_distance(shape, local), abs=1e-9
            )

    @pytest.mark.parametrize(
        "shape",
        [
            ShapePrimitive("sphere", (0.07,)),
            ShapePrimitive("box", (0.2, 0.3, 0.15)),
            ShapePrimitive("cylinder", (0.05, 0.2)),
        ],
        ids=["sphere", "box", "cylinder"],
    )
    def test_distance_decreases_toward_surface(self, shape):
        obj = SceneObject("thing", shape, Pose(np.zeros(3)))
        rng = np.random.default_rng(5)
        for _ in range(50):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            far = direction * (shape.bounding_radius + 0.5)
            near = direction * (shape.bounding_radius + 0.1)
            assert signed_distance(near, obj) < signed_distance(far, obj)


class TestLoadScene:
    def test_bundled_table_clearing(self, table_scene):
        assert len(table_scene.objects) == 9
        assert len(table_scene.locations) == 4
        assert "crumpled paper ball 2" in table_scene.labels
        assert table_scene.entity("crumpled paper ball 2").graspable_from == ("side",)
        # Trash can serves as both object and location.
        assert "large red trash can" in table_scene.object_labels
        assert "large red trash can" in table_scene.location_labels
        assert len(table_scene.entities) == 10

    def test_bundled_two_objects(self):
        scene = load_scene(bundled_scene("two_objects"))
        assert len(scene.objects) == 3
        glass = scene.entity("glass with yellowish liquid")
        assert glass.container_contents == "yellowish liquid"
        assert glass.spill_tilt_limit == pytest.approx(math.radians(30.0))

    def test_duplicate_label_rejected(self, tmp_path):
        doc = """
workspace: {min: [-1, -1, -1], max: [1, 1, 1]}
robot: {pose: {xyz: [0, 0, 0]}}
objects:
  - {label: apple, shape: {kind: sphere, dims: [0.04]}, pose: {xyz: [0.4, 0, 0.04]}}
  - {label: apple, shape: {kind: sphere, dims: [0.05]}, pose: {xyz: [0.5, 0, 0.05]}}
"""
        path = tmp_path / "dup.yaml"
        path.write_text(doc)
        with pytest.raises(ConfigError, match="duplicate label"):
            load_scene(path)

    def test_minimal_table_only_scene(self, tmp_path):
        doc = """
workspace: {min: [-1, -1, -1], max: [1, 1, 1]}
robot: {pose: {xyz: [0, 0, 0]}}
objects: []
locations:
  - label: white table
    shape: {kind: box, dims: [1.0, 1.0, 0.7]}
    pose: {xyz: [0.3, 0.0, -0.35]}
    movable: false
"""
        path = tmp_path / "minimal.yaml"
        path.write_text(doc)
        scene = load_scene(path)
        assert scene.objects == ()
        assert len(scene.locations) == 1

    def test_movable_table_rejected(self, tmp_path):
        doc = """
workspace: {min: [-1, -1, -1], max: [1, 1, 1]}
robot: {pose: {xyz: [0, 0, 0]}}
objects:
  - {label: white table, shape: {kind: box, dims: [1, 1, 0.7]}, pose: {xyz: [0, 0, -0.35]}, movable: true}
"""
        path = tmp_path / "bad.yaml"
        path.write_text(doc)
        with pytest.raises(ConfigError, match="immovable"):
            load_scene(path)

    def test_error_carries_key_path(self, tmp_path):
        doc = """
workspace: {min: [-1, -1, -1], max: [1, 1, 1]}
robot: {pose: {xyz: [0, 0, 0]}}
objects:
  - {label: apple, shape: {kind: blob, dims: [0.04]}, pose: {xyz: [0.4, 0, 0.04]}}
"""
        path = tmp_path / "bad.yaml"
        path.write_text(doc)
        with pytest.raises(ConfigError, match=r"objects\[0\]"):
            load_scene(path)


class TestMinLinkClearance:
    def test_touching_sphere(self, arm):
        # A box face placed exactly at a gripper-sphere surface gives zero clearance.
        scene = _single_box_scene(face_x=None)
        state = initial_state(scene, arm)
        bodies = collision_bodies(state, arm)
        tool_center, tool_radius = bodies[-1]
        box_x = tool_center[0] + tool_radius + 0.25  # box face 0.25 m from the sphere
        scene = _single_box_scene(face_x=box_x)
        state = initial_state(scene, arm)
        d, label = min_link_clearance(state, arm)
        assert label == "crate"
        assert d <= 0.25 + 1e-9

    def test_two_candidates_returns_nearer(self, arm):
        scene = _two_sphere_scene(0.03, 0.05)
        state = initial_state(scene, arm)
        d, label = min_link_clearance(state, arm)
        oracle_d, oracle_label = _clearance_oracle(state, arm, set())
        assert d == pytest.approx(oracle_d, abs=1e-12)
        assert label == oracle_label

    def test_matches_brute_force_on_random_states(self, arm, table_scene):
        rng = np.random.default_rng(19)
        lo, hi = arm.lower_limits, arm.upper_limits
        state = initial_state(table_scene, arm)
        for _ in range(200):
            q = lo + rng.random(7) * (hi - lo)
            trial = state.with_changes(arm_q=q)
            exclude = set()
            if rng.random() < 0.3:
                exclude = {"white table"}
            d, label = min_link_clearance(trial, arm, exclude)
            oracle_d, oracle_label = _clearance_oracle(trial, arm, exclude)
            assert d == pytest.approx(oracle_d, abs=1e-12)
            assert label == oracle_label

    def test_empty_scene(self, arm, table_scene):
        state = initial_state(table_scene, arm)
        with pytest.raises(EmptySceneError):
            min_link_clearance(state, arm, exclude=table_scene.labels)


class TestWorkspaceBound:
    def test_base_at_center(self, arm):
        scene = _synthetic_scene(ws_min=[-1, -1, -1], ws_max=[1, 1, 1])
        assert workspace_diameter_bound(scene, arm) == pytest.approx(math.sqrt(3), abs=1e-12)

    def test_base_at_corner(self, arm):
        scene = _synthetic_scene(ws_min=[0, 0, 0], ws_max=[2, 2, 2])
        assert workspace_diameter_bound(scene, arm) == pytest.approx(math.sqrt(12), abs=1e-12)

    def test_bundled_scene_value(self, arm, table_scene):
        # Frozen from the bundled workspace box: corner (1.2, 1.2, 1.4) from the origin base.
        expected = math.sqrt(1.2**2 + 1.2**2 + 1.4**2)
        assert workspace_diameter_bound(table_scene, arm) == pytest.approx(expected, abs=1e-12)
        assert workspace_diameter_bound(table_scene, arm) > 0


class TestPrimitivePairDistance:
    def test_sphere_sphere_exact(self):
        a = SceneObject("a", ShapePrimitive("sphere", (0.05,)), Pose(np.zeros(3)))
        b = SceneObject("b", ShapePrimitive("sphere", (0.03,)), Pose(np.array([0.2, 0.0, 0.0])))
        assert primitive_pair_distance(a, a.pose, b, b.pose) == pytest.approx(0.12, abs=1e-12)

    def test_sphere_box_exact(self):
        a = SceneObject("a", ShapePrimitive("sphere", (0.05,)), Pose(np.array([0.0, 0.0, 0.5])))
        b = SceneObject("b", ShapePrimitive("box", (0.4, 0.4, 0.4)), Pose(np.zeros(3)))
        assert primitive_pair_distance(a, a.pose, b, b.pose) == pytest.approx(0.25, abs=1e-12)

    def test_box_box_sampled(self):
        a = SceneObject("a", ShapePrimitive("box", (0.2, 0.2, 0.2)), Pose(np.array([0.0, 0.0, 0.5])))
        b = SceneObject("b", ShapePrimitive("box", (0.4, 0.4, 0.4)), Pose(np.zeros(3)))
        # True gap 0.2; surface sampling may overestimate slightly.
        assert primitive_pair_distance(a, a.pose, b, b.pose) == pytest.approx(0.2, abs=0.02)

    def test_overlap_is_negative(self):
        a = SceneObject("a", ShapePrimitive("sphere", (0.1,)), Pose(np.zeros(3)))
        b = SceneObject("b", ShapePrimitive("sphere", (0.1,)), Pose(np.array([0.05, 0.0, 0.0])))
        assert primitive_pair_distance(a, a.pose, b, b.pose) < 0


def _clearance_oracle(state, arm, exclude: set[str]) -> tuple[float, str]:
    """Triple-loop brute force over robot bodies and scene entities."""
    exclude = set(exclude)
    if state.gripper.attached is not None:
        exclude.add(state.gripper.attached)
    best, best_label = math.inf, ""
    for entity in sorted((e for e in state.scene.entities if e.label not in exclude), key=lambda e: e.label):
        pose = state.pose_of(entity.label)
        for center, radius in collision_bodies(state, arm):
            d = entity.shape.sdf_local(pose.inverse_transform_point(center)) - radius
            if d < best:
                best, best_label = d, entity.label
    return best, best_label


def _synthetic_scene(ws_min, ws_max) -> Scene:
    table = SceneObject(
        "white table",
        ShapePrimitive("box", (1.0, 1.0, 0.2)),
        Pose(np.array([0.0, 0.0, -0.5])),
        movable=False,
    )
    return Scene(
        objects=(table,),
        locations=(table,),
        workspace_min=np.asarray(ws_min, dtype=float),
        workspace_max=np.asarray(ws_max, dtype=float),
        robot_base=Pose(np.zeros(3)),
    )


def _single_box_scene(face_x: float | None) -> Scene:
    x = 2.0 if face_x is None else face_x + 0.2  # box of half-extent 0.2 in x
    crate = SceneObject(
        "crate",
        ShapePrimitive("box", (0.4, 0.8, 0.8)),
        Pose(np.array([x, 0.0, 0.3])),
        movable=False,
    )
    return Scene(
        objects=(crate,),
        locations=(crate,),
        workspace_min=np.array([-2.0, -2.0, -2.0]),
        workspace_max=np.array([3.0, 2.0, 2.0]),
        robot_base=Pose(np.zeros(3)),
    )


def _two_sphere_scene(gap_a: float, gap_b: float) -> Scene:
    near = SceneObject("alpha ball", ShapePrimitive("sphere", (0.05,)), Pose(np.array([0.8, gap_a, 0.3])))
    far = SceneObject("beta ball", ShapePrimitive("sphere", (0.05,)), Pose(np.array([0.8, gap_b + 0.3, 0.3])))
    return Scene(
        objects=(near, far),
        locations=(),
        workspace_min=np.array([-2.0, -2.0, -2.0]),
        workspace_max=np.array([2.0, 2.0, 2.0]),
        robot_base=Pose(np.zeros(3)),
    )
