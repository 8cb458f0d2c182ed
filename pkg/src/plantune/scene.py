"""Declarative scenes: primitive shapes, signed distances, object and robot state.

The world is a set of shape primitives with poses.  Signed-distance queries are
analytic and exact for every primitive, which keeps clearance numbers and the
collision verdicts reproducible bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, load_document, require
from .geometry import Pose, matrix_from_quat
from .kinematics import ArmModel, link_transforms

GRASP_DIRECTIONS = ("top", "side")
IMMOVABLE_MARKERS = ("table", "sink", "shelf", "trash can")


class InvalidTargetError(KeyError):
    """Referenced label does not exist in the scene."""


class EmptySceneError(ValueError):
    """Clearance query with no candidate objects left after exclusions."""


@dataclass(frozen=True)
class ShapePrimitive:
    kind: str  # sphere | box | cylinder
    dims: tuple[float, ...]
    # sphere: (radius,); box: (size_x, size_y, size_z); cylinder: (radius, height)

    def __post_init__(self) -> None:
        expected = {"sphere": 1, "box": 3, "cylinder": 2}
        if self.kind not in expected:
            raise ConfigError(f"shape.kind: unknown primitive {self.kind!r}")
        if len(self.dims) != expected[self.kind]:
            raise ConfigError(f"shape.dims: {self.kind} needs {expected[self.kind]} dimensions")
        if any(d <= 0 for d in self.dims):
            raise ConfigError("shape.dims: all dimensions must be positive")

    @property
    def bounding_radius(self) -> float:
        if self.kind == "sphere":
            return self.dims[0]
        if self.kind == "box":
            return float(np.linalg.norm(np.asarray(self.dims) / 2.0))
        radius, height = self.dims
        return math.hypot(radius, height / 2.0)

    @property
    def half_height(self) -> float:
        if self.kind == "sphere":
            return self.dims[0]
        if self.kind == "box":
            return self.dims[2] / 2.0
        return self.dims[1] / 2.0

    @property
    def horizontal_radius(self) -> float:
        if self.kind == "sphere":
            return self.dims[0]
        if self.kind == "box":
            return math.hypot(self.dims[0], self.dims[1]) / 2.0
        return self.dims[0]

    def grasp_extent(self, grasp: str) -> float:
        """Center-to-surface distance along a grasp direction (top = above, side = lateral)."""
        return self.half_height if grasp == "top" else self.horizontal_radius

    def sdf_local(self, point: np.ndarray) -> float:
        """Exact signed distance in the shape's own frame: negative inside."""
        p = np.asarray(point, dtype=float)
        if self.kind == "sphere":
            return float(np.linalg.norm(p) - self.dims[0])
        if self.kind == "box":
            half = np.asarray(self.dims) / 2.0
            q = np.abs(p) - half
            outside = float(np.linalg.norm(np.maximum(q, 0.0)))
            inside = float(min(np.max(q), 0.0))
            return outside + inside
        radius, height = self.dims
        d_radial = math.hypot(p[0], p[1]) - radius
        d_axial = abs(p[2]) - height / 2.0
        outside = math.hypot(max(d_radial, 0.0), max(d_axial, 0.0))
        inside = min(max(d_radial, d_axial), 0.0)
        return outside + inside

    def sdf_local_many(self, points: np.ndarray) -> np.ndarray:
        """Vectorized sdf_local over an (n, 3) array of points."""
        p = np.asarray(points, dtype=float)
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=1) - self.dims[0]
        if self.kind == "box":
            half = np.asarray(self.dims) / 2.0
            q = np.abs(p) - half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(np.max(q, axis=1), 0.0)
            return outside + inside
        radius, height = self.dims
        d_radial = np.hypot(p[:, 0], p[:, 1]) - radius
        d_axial = np.abs(p[:, 2]) - height / 2.0
        outside = np.hypot(np.maximum(d_radial, 0.0), np.maximum(d_axial, 0.0))
        inside = np.minimum(np.maximum(d_radial, d_axial), 0.0)
        return outside + inside

    def collision_spheres(self) -> tuple[tuple[np.ndarray, float], ...]:
        """Tight local sphere cover, used when the shape rides the gripper."""
        if self.kind == "sphere":
            return ((np.zeros(3), self.dims[0]),)
        if self.kind == "cylinder":
            radius, height = self.dims
            if height <= 2 * radius:
                return ((np.zeros(3), self.bounding_radius),)
            reach = height / 2.0 - radius
            count = max(2, int(math.ceil(height / radius)) - 1)
            zs = np.linspace(-reach, reach, count)
            return tuple((np.array([0.0, 0.0, z]), radius) for z in zs)
        return ((np.zeros(3), self.bounding_radius),)

    def surface_samples(self, count: int = 128) -> np.ndarray:
        """Deterministic surface point set in the local frame (used for pair distances)."""
        if self.kind == "sphere":
            return _fibonacci_sphere(count) * self.dims[0]
        golden = 0.6180339887498949
        points = []
        if self.kind == "box":
            half = np.asarray(self.dims) / 2.0
            for i in range(count):
                face = i % 6
                u = (i * golden) % 1.0 * 2.0 - 1.0
                v = (i * 0.7548776662466927) % 1.0 * 2.0 - 1.0
                axis = face // 2
                sign = 1.0 if face % 2 == 0 else -1.0
                p = np.zeros(3)
                p[axis] = sign * half[axis]
                others = [k for k in range(3) if k != axis]
                p[others[0]] = u * half[others[0]]
                p[others[1]] = v * half[others[1]]
                points.append(p)
            return np.asarray(points)
        radius, height = self.dims
        for i in range(count):
            u = (i * golden) % 1.0
            v = (i * 0.7548776662466927) % 1.0
            region = i % 4
            if region < 2:  # lateral surface, sampled twice as densely
                angle = 2 * math.pi * u
                points.append([radius * math.cos(angle), radius * math.sin(angle), (v - 0.5) * height])
            else:  # end caps
                angle = 2 * math.pi * u
                r = radius * math.sqrt(v)
                z = height / 2.0 if region == 2 else -height / 2.0
                points.append([r * math.cos(angle), r * math.sin(angle), z])
        return np.asarray(points)


def _fibonacci_sphere(count: int) -> np.ndarray:
    indices = np.arange(count, dtype=float) + 0.5
    phi = np.arccos(1 - 2 * indices / count)
    theta = math.pi * (1 + math.sqrt(5)) * indices
    return np.column_stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]
    )


@dataclass(frozen=True)
class SceneObject:
    label: str
    shape: ShapePrimitive
    pose: Pose
    movable: bool = True
    graspable_from: tuple[str, ...] = ("top", "side")
    container_contents: str | None = None
    spill_tilt_limit: float | None = None  # radians


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    locations: tuple[SceneObject, ...]
    workspace_min: np.ndarray
    workspace_max: np.ndarray
    robot_base: Pose

    def __post_init__(self) -> None:
        if not np.all(self.workspace_min < self.workspace_max):
            raise ConfigError("workspace: min must be strictly below max on every axis")
        base = self.robot_base.position
        if not (np.all(base >= self.workspace_min) and np.all(base <= self.workspace_max)):
            raise ConfigError("workspace: must contain the robot base")

    @property
    def entities(self) -> tuple[SceneObject, ...]:
        """All distinct scene bodies: objects plus location-only bodies."""
        seen = {o.label for o in self.objects}
        extra = tuple(l for l in self.locations if l.label not in seen)
        return self.objects + extra

    @property
    def labels(self) -> set[str]:
        return {e.label for e in self.entities}

    @property
    def object_labels(self) -> list[str]:
        return [o.label for o in self.objects]

    @property
    def location_labels(self) -> list[str]:
        return [l.label for l in self.locations]

    def entity(self, label: str) -> SceneObject:
        for item in self.entities:
            if item.label == label:
                return item
        raise InvalidTargetError(label)

    def contains_point(self, point: np.ndarray) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.workspace_min) and np.all(p <= self.workspace_max))


@dataclass(frozen=True)
class GripperState:
    closed: bool = False
    contact_count: int = 0
    attached: str | None = None
    grab_transform: Pose | None = None  # attached-object pose in the tool frame


@dataclass(frozen=True)
class WorldState:
    scene: Scene
    object_poses: dict[str, Pose]
    gripper: GripperState
    arm_q: np.ndarray
    sim_time: float = 0.0
    spilled: frozenset[str] = frozenset()

    def pose_of(self, label: str) -> Pose:
        if label not in self.object_poses:
            raise InvalidTargetError(label)
        return self.object_poses[label]

    def with_changes(self, **changes) -> "WorldState":
        return replace(self, **changes)

    def copy(self) -> "WorldState":
        return replace(self, object_poses=dict(self.object_poses), arm_q=self.arm_q.copy())


def initial_state(scene: Scene, arm: ArmModel) -> WorldState:
    poses = {e.label: e.pose for e in scene.entities}
    return WorldState(
        scene=scene,
        object_poses=poses,
        gripper=GripperState(),
        arm_q=np.array(arm.home, dtype=float),
    )


# --------------------------------------------------------------------------
# Scene loading
# --------------------------------------------------------------------------

def load_scene(path: str | Path) -> Scene:
    return scene_from_document(load_document(path))


def load_scene_text(text: str, origin: str = "<scene>") -> Scene:
    from .config import parse_document

    return scene_from_document(parse_document(text, origin))


def scene_from_document(doc: dict) -> Scene:
    workspace = doc.get("workspace")
    if not isinstance(workspace, dict):
        raise ConfigError("workspace: missing section")
    ws_min = _vector(workspace, "min", "workspace")
    ws_max = _vector(workspace, "max", "workspace")
    robot = doc.get("robot")
    if not isinstance(robot, dict) or "pose" not in robot:
        raise ConfigError("robot.pose: missing")
    base = _pose(robot["pose"], "robot.pose")

    objects: list[SceneObject] = []
    labels: set[str] = set()
    for i, item in enumerate(doc.get("objects", []) or []):
        obj = _scene_object(item, f"objects[{i}]")
        if obj.label in labels:
            raise ConfigError(f"objects[{i}].label: duplicate label {obj.label!r}")
        labels.add(obj.label)
        objects.append(obj)

    locations: list[SceneObject] = []
    by_label = {o.label: o for o in objects}
    for i, item in enumerate(doc.get("locations", []) or []):
        where = f"locations[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{where}: expected a mapping")
        label = require(item, "label", str, where)
        if set(item) == {"label"}:
            if label not in by_label:
                raise ConfigError(f"{where}.label: reference to unknown object {label!r}")
            locations.append(by_label[label])
            continue
        if label in labels:
            raise ConfigError(f"{where}.label: duplicate label {label!r}")
        loc = _scene_object(item, where)
        labels.add(label)
        locations.append(loc)

    return Scene(
        objects=tuple(objects),
        locations=tuple(locations),
        workspace_min=ws_min,
        workspace_max=ws_max,
        robot_base=base,
    )


def _scene_object(item: object, where: str) -> SceneObject:
    if not isinstance(item, dict):
        raise ConfigError(f"{where}: expected a mapping")
    label = require(item, "label", str, where)
    shape_doc = item.get("shape")
    if not isinstance(shape_doc, dict):
        raise ConfigError(f"{where}.shape: missing")
    kind = require(shape_doc, "kind", str, f"{where}.shape")
    dims = shape_doc.get("dims")
    if not isinstance(dims, list):
        raise ConfigError(f"{where}.shape.dims: expected a list")
    try:
        shape = ShapePrimitive(kind, tuple(float(d) for d in dims))
    except ConfigError as exc:
        raise ConfigError(f"{where}.{exc}") from None
    pose = _pose(item.get("pose"), f"{where}.pose")
    movable = bool(item.get("movable", True))
    if movable and any(marker in label for marker in IMMOVABLE_MARKERS):
        raise ConfigError(f"{where}.movable: {label!r} must be immovable")
    graspable = item.get("graspable_from", ["top", "side"])
    if not isinstance(graspable, list) or not set(graspable) <= set(GRASP_DIRECTIONS):
        raise ConfigError(f"{where}.graspable_from: entries must be from {GRASP_DIRECTIONS}")
    contents = None
    tilt_limit = None
    if "container" in item:
        container = item["container"]
        if not isinstance(container, dict):
            raise ConfigError(f"{where}.container: expected a mapping")
        contents = require(container, "contents", str, f"{where}.container")
        tilt_limit = math.radians(require(container, "spill_tilt_deg", float, f"{where}.container"))
    return SceneObject(
        label=label,
        shape=shape,
        pose=pose,
        movable=movable,
        graspable_from=tuple(g for g in GRASP_DIRECTIONS if g in graspable),
        container_contents=contents,
        spill_tilt_limit=tilt_limit,
    )


def _vector(mapping: dict, key: str, path: str) -> np.ndarray:
    value = mapping.get(key)
    if not isinstance(value, list) or len(value) != 3:
        raise ConfigError(f"{path}.{key}: expected [x, y, z]")
    return np.asarray([float(v) for v in value])


def _pose(value: object, path: str) -> Pose:
    if not isinstance(value, dict) or "xyz" not in value:
        raise ConfigError(f"{path}: expected a mapping with xyz (and optional rpy)")
    xyz = value["xyz"]
    if not isinstance(xyz, list) or len(xyz) != 3:
        raise ConfigError(f"{path}.xyz: expected [x, y, z]")
    rpy = value.get("rpy", [0.0, 0.0, 0.0])
    if not isinstance(rpy, list) or len(rpy) != 3:
        raise ConfigError(f"{path}.rpy: expected [roll, pitch, yaw]")
    return Pose.from_xyz_rpy([float(v) for v in xyz], [float(v) for v in rpy])


# --------------------------------------------------------------------------
# Distance queries
# --------------------------------------------------------------------------

def signed_distance(point: np.ndarray, obj: SceneObject, pose: Pose | None = None) -> float:
    """Signed distance from a world point to the object: negative inside, zero on surface."""
    at = pose if pose is not None else obj.pose
    return obj.shape.sdf_local(at.inverse_transform_point(point))


def collision_bodies(
    state: WorldState,
    arm: ArmModel,
    include_attached: bool = True,
) -> list[tuple[np.ndarray, float]]:
    """World-frame (center, radius) spheres of the robot system at the current config.

    Covers the seven links and the gripper body, plus any rigidly attached
    object (tight sphere cover) unless `include_attached` is False.
    """
    frames = link_transforms(arm, state.arm_q)
    base = state.scene.robot_base.matrix()
    bodies: list[tuple[np.ndarray, float]] = []
    for i, joint in enumerate(arm.joints):
        world = base @ frames[i]
        for sphere in joint.spheres:
            center = world[:3, :3] @ np.asarray(sphere.center) + world[:3, 3]
            bodies.append((center, sphere.radius))
    tool = base @ frames[-1]
    for sphere in arm.gripper_spheres:
        center = tool[:3, :3] @ np.asarray(sphere.center) + tool[:3, 3]
        bodies.append((center, sphere.radius))
    if include_attached and state.gripper.attached is not None:
        obj = state.scene.entity(state.gripper.attached)
        if state.gripper.grab_transform is not None:
            # The carried body rides the tool frame, so its spheres follow the
            # current joint configuration rather than the stored object pose.
            carried = tool @ state.gripper.grab_transform.matrix()
        else:
            carried = state.pose_of(obj.label).matrix()
        for local, radius in obj.shape.collision_spheres():
            bodies.append((carried[:3, :3] @ local + carried[:3, 3], radius))
    return bodies


def min_link_clearance(
    state: WorldState,
    arm: ArmModel,
    exclude: set[str] = frozenset(),
    include_attached: bool = True,
) -> tuple[float, str]:
    """Minimum clearance between any robot body and any non-excluded scene body.

    Returns (clearance in meters, label of the nearest body); ties go to the
    lexicographically smaller label.  Negative clearance means penetration.
    `include_attached` controls whether a carried object counts as part of the
    robot (it does for collision accounting; motion scoring measures the links
    and gripper only).
    """
    exclude = set(exclude)
    if state.gripper.attached is not None:
        exclude.add(state.gripper.attached)
    candidates = [e for e in state.scene.entities if e.label not in exclude]
    if not candidates:
        raise EmptySceneError("no non-excluded objects in the scene")
    bodies = collision_bodies(state, arm, include_attached=include_attached)
    centers = np.asarray([c for c, _ in bodies])
    radii = np.asarray([r for _, r in bodies])
    best = math.inf
    best_label = ""
    for entity in sorted(candidates, key=lambda e: e.label):
        pose = state.pose_of(entity.label)
        rot = matrix_from_quat(pose.quaternion)
        local = (centers - pose.position) @ rot
        distances = entity.shape.sdf_local_many(local) - radii
        d = float(np.min(distances))
        if d < best:
            best = d
            best_label = entity.label
    return best, best_label


def workspace_diameter_bound(scene: Scene, arm: ArmModel) -> float:
    """Fixed per-scene normalizer: furthest workspace-box corner from the robot base."""
    corners = []
    for ix in (scene.workspace_min[0], scene.workspace_max[0]):
        for iy in (scene.workspace_min[1], scene.workspace_max[1]):
            for iz in (scene.workspace_min[2], scene.workspace_max[2]):
                corners.append([ix, iy, iz])
    base = scene.robot_base.position
    return float(max(np.linalg.norm(np.asarray(c) - base) for c in corners))


# --------------------------------------------------------------------------
# Grasp geometry
# --------------------------------------------------------------------------

GRASP_STANDOFF = 0.05  # pre-grasp margin beyond the target's bounding radius, meters


def grasp_direction(state: WorldState, target: str, grasp: str) -> np.ndarray:
    """Unit approach direction for a grasp: from the standoff side toward the target.

    Top grasps come straight down; side grasps come in horizontally along the
    base-to-target bearing.
    """
    if grasp == "top":
        return np.array([0.0, 0.0, -1.0])
    bearing = state.pose_of(target).position - state.scene.robot_base.position
    bearing[2] = 0.0
    norm = float(np.linalg.norm(bearing))
    if norm < 1e-9:
        return np.array([1.0, 0.0, 0.0])
    return bearing / norm


def grasp_offset_point(state: WorldState, target: str, grasp: str, margin: float) -> np.ndarray:
    """Tool-point position for grasping `target` from `grasp` with the given margin.

    The point sits grasp_extent + margin back from the object center along the
    approach direction, i.e. margin meters off the grasped surface.
    """
    entity = state.scene.entity(target)
    direction = grasp_direction(state, target, grasp)
    offset = entity.shape.grasp_extent(grasp) + margin
    return state.pose_of(target).position - direction * offset


_SIDE_PITCH = 0.6  # rad the tool axis pitches below horizontal on side grasps


def grasp_goal_pose(state: WorldState, target: str, grasp: str, margin: float) -> Pose:
    """Full tool pose at the grasp offset point.

    Top grasps point the tool axis straight down.  Side grasps keep the offset
    point lateral but pitch the tool axis below horizontal so the forearm
    stays above the support surface.
    """
    if grasp == "top":
        axis = np.array([0.0, 0.0, -1.0])
    else:
        bearing = grasp_direction(state, target, grasp)
        axis = math.cos(_SIDE_PITCH) * bearing + np.array([0.0, 0.0, -math.sin(_SIDE_PITCH)])
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(np.dot(axis, up))) > 0.9:
        up = np.array([1.0, 0.0, 0.0])
    x_axis = np.cross(up, axis)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(axis, x_axis)
    rot = np.column_stack([x_axis, y_axis, axis])
    from .geometry import quat_from_matrix

    return Pose(grasp_offset_point(state, target, grasp, margin), quat_from_matrix(rot))


def support_top(entity: SceneObject, pose: Pose) -> float:
    """World z of the entity's upper support surface (entities are kept upright)."""
    return float(pose.position[2]) + entity.shape.half_height


def primitive_pair_distance(
    obj_a: SceneObject,
    pose_a: Pose,
    obj_b: SceneObject,
    pose_b: Pose,
    samples: int = 128,
) -> float:
    """Minimum distance between two primitives (negative when overlapping).

    Sphere-to-anything is exact via the other body's signed distance field;
    other pairs sample the smaller primitive's surface.
    """
    if obj_a.shape.kind == "sphere":
        return signed_distance(pose_a.position, obj_b, pose_b) - obj_a.shape.dims[0]
    if obj_b.shape.kind == "sphere":
        return signed_distance(pose_b.position, obj_a, pose_a) - obj_b.shape.dims[0]
    small, small_pose, big, big_pose = obj_a, pose_a, obj_b, pose_b
    if obj_b.shape.bounding_radius < obj_a.shape.bounding_radius:
        small, small_pose, big, big_pose = obj_b, pose_b, obj_a, pose_a
    local_points = small.shape.surface_samples(samples)
    world = np.asarray([small_pose.transform_point(p) for p in local_points])
    in_big = np.asarray([big_pose.inverse_transform_point(p) for p in world])
    return float(np.min(big.shape.sdf_local_many(in_big)))
