"""
Scene description and keypoint generation
Oriented-box objects, static support surfaces, labeled keypoints and top-down pruning
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np

from ..models.scene_models import ObjectSpec, PoseSpec, SceneFile
from .geometry import Pose, quat_from_yaw, transform_point, yaw_of

logger = logging.getLogger(__name__)

DEFAULT_KEYPOINT_SPACING = 0.10  # m between static surface keypoints
DEFAULT_MIN_SEPARATION = 0.03  # m in top-down projection
TABLE_ID = "table"


@dataclass(frozen=True)
class ObjectModel:
    """Oriented box; half_extents in m along the object axes"""
    id: str
    half_extents: np.ndarray
    manipulable: bool
    initial_pose: Pose
    color_tag: str = "gray"

    def __post_init__(self):
        half_extents = np.asarray(self.half_extents, dtype=np.float64)
        if half_extents.shape != (3,) or np.any(half_extents <= 0):
            raise ValueError(f"object {self.id}: half_extents must be three positive values")
        object.__setattr__(self, "half_extents", half_extents)


@dataclass(frozen=True)
class Keypoint:
    """Labeled point; object frame for manipulable objects, world frame for static surfaces"""
    label: int
    object_id: str
    local: np.ndarray
    world_frame: bool = False

    def __post_init__(self):
        if self.label < 1:
            raise ValueError("keypoint labels are positive integers")
        object.__setattr__(self, "local", np.asarray(self.local, dtype=np.float64))


@dataclass(frozen=True)
class StaticRegion:
    """Axis-aligned rectangle (xmin, xmax, ymin, ymax) on a static surface"""
    object_id: str
    rect: Tuple[float, float, float, float]
    spacing: float = DEFAULT_KEYPOINT_SPACING


@dataclass(frozen=True)
class SceneModel:
    objects: List[ObjectModel]
    workspace_min: np.ndarray
    workspace_max: np.ndarray
    keypoints: List[Keypoint] = field(default_factory=list)
    static_regions: List[StaticRegion] = field(default_factory=list)
    gripper_home: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "workspace_min", np.asarray(self.workspace_min, dtype=np.float64))
        object.__setattr__(self, "workspace_max", np.asarray(self.workspace_max, dtype=np.float64))
        for obj in self.objects:
            position = obj.initial_pose.position
            if np.any(position < self.workspace_min - 1e-9) or np.any(position > self.workspace_max + 1e-9):
                raise ValueError(f"object {obj.id} initial pose lies outside the workspace")

    # Lookups

    def object(self, object_id: str) -> ObjectModel:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(f"unknown object id {object_id}")

    @property
    def manipulable_objects(self) -> List[ObjectModel]:
        return [obj for obj in self.objects if obj.manipulable]

    @property
    def static_objects(self) -> List[ObjectModel]:
        return [obj for obj in self.objects if not obj.manipulable]

    @property
    def labels(self) -> List[int]:
        return [kp.label for kp in self.keypoints]

    def keypoint(self, label: int) -> Keypoint:
        for kp in self.keypoints:
            if kp.label == label:
                return kp
        raise KeyError(f"unknown keypoint label {label}")

    def keypoints_of(self, object_id: str) -> List[Keypoint]:
        return [kp for kp in self.keypoints if kp.object_id == object_id]

    def color_of(self, object_id: str) -> str:
        if object_id == TABLE_ID:
            return "table"
        return self.object(object_id).color_tag

    def initial_poses(self) -> Dict[str, Pose]:
        return {obj.id: obj.initial_pose for obj in self.objects}

    def with_object_poses(self, poses: Mapping[str, Pose]) -> "SceneModel":
        """Copy with updated object poses; keypoints are dropped and must be rebuilt"""
        objects = [replace(obj, initial_pose=poses.get(obj.id, obj.initial_pose)) for obj in self.objects]
        return replace(self, objects=objects, keypoints=[])

    def keypoint_positions(self, object_poses: Optional[Mapping[str, Pose]] = None,
                           scales: Optional[Mapping[str, float]] = None) -> Dict[int, np.ndarray]:
        """World position per label for the given (or initial) object poses"""
        poses = dict(self.initial_poses())
        if object_poses:
            poses.update(object_poses)
        positions = {}
        for kp in self.keypoints:
            if kp.world_frame:
                positions[kp.label] = kp.local.copy()
            else:
                scale = scales.get(kp.object_id, 1.0) if scales else 1.0
                positions[kp.label] = transform_point(poses[kp.object_id], kp.local * scale)
        return positions

    def support_height(self, xy: np.ndarray) -> np.ndarray:
        """Top surface z under each (x, y); 0 is the table plane"""
        xy = np.asarray(xy, dtype=np.float64)
        height = np.zeros(xy.shape[:-1])
        for obj in self.static_objects:
            pose = obj.initial_pose
            delta = xy - pose.position[:2]
            yaw = float(yaw_of(pose.orientation))
            c, s = math.cos(yaw), math.sin(yaw)
            local_x = c * delta[..., 0] + s * delta[..., 1]
            local_y = -s * delta[..., 0] + c * delta[..., 1]
            inside = (np.abs(local_x) <= obj.half_extents[0]) & (np.abs(local_y) <= obj.half_extents[1])
            top = pose.position[2] + obj.half_extents[2]
            height = np.where(inside, np.maximum(height, top), height)
        return height


def sample_object_keypoints(obj: ObjectModel, start_label: int = 1) -> List[Keypoint]:
    """
    Four keypoints at the extremities of the two horizontal object axes

    Args:
        obj: Manipulable object
        start_label: Label of the first keypoint

    Returns:
        Keypoints (+x, -x, +y, -y) in the object frame
    """
    if not obj.manipulable:
        raise ValueError(f"object {obj.id} is static; use surface keypoints")
    hx, hy, _ = obj.half_extents
    locals_ = [(hx, 0.0, 0.0), (-hx, 0.0, 0.0), (0.0, hy, 0.0), (0.0, -hy, 0.0)]
    return [Keypoint(start_label + i, obj.id, np.array(p)) for i, p in enumerate(locals_)]


def _grid_axis(lo: float, hi: float, spacing: float) -> np.ndarray:
    length = hi - lo
    count = int(math.floor(length / spacing + 1e-9)) + 1
    start = lo + 0.5 * (length - (count - 1) * spacing)
    return start + spacing * np.arange(count)


def sample_surface_keypoints(rect: Tuple[float, float, float, float], spacing: float,
                             object_id: str = TABLE_ID, height: float = 0.0,
                             start_label: int = 1) -> List[Keypoint]:
    """
    Uniform grid of world-frame keypoints centered in a rectangle, labeled row-major (y rows, x columns)

    A spacing larger than the rectangle yields a single center point.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    xmin, xmax, ymin, ymax = rect
    if xmin > xmax or ymin > ymax:
        raise ValueError("region is empty")
    xs = _grid_axis(xmin, xmax, spacing)
    ys = _grid_axis(ymin, ymax, spacing)
    keypoints = []
    label = start_label
    for y in ys:
        for x in xs:
            keypoints.append(Keypoint(label, object_id, np.array([x, y, height]), world_frame=True))
            label += 1
    return keypoints


def _surface_height(scene: SceneModel, object_id: str) -> float:
    if object_id == TABLE_ID:
        return 0.0
    obj = scene.object(object_id)
    if obj.manipulable:
        raise ValueError(f"static region refers to manipulable object {object_id}")
    return float(obj.initial_pose.position[2] + obj.half_extents[2])


def build_keypoints(scene: SceneModel) -> SceneModel:
    """Label manipulable-object blocks first (file order), then static regions (region order)"""
    keypoints: List[Keypoint] = []
    label = 1
    for obj in scene.manipulable_objects:
        block = sample_object_keypoints(obj, start_label=label)
        keypoints.extend(block)
        label += len(block)
    for region in scene.static_regions:
        block = sample_surface_keypoints(region.rect, region.spacing, region.object_id,
                                         _surface_height(scene, region.object_id), start_label=label)
        keypoints.extend(block)
        label += len(block)
    return replace(scene, keypoints=keypoints)


def prune_and_label(scene: SceneModel, min_separation: float = DEFAULT_MIN_SEPARATION) -> SceneModel:
    """
    Remove keypoints that overlap in the top-down projection

    Static keypoints near any object keypoint go first; among overlapping object keypoints
    only the lowest label survives. Labels are not renumbered.
    """
    positions = scene.keypoint_positions()
    manipulable_ids = {obj.id for obj in scene.manipulable_objects}
    object_kps = sorted((kp for kp in scene.keypoints if kp.object_id in manipulable_ids),
                        key=lambda kp: kp.label)
    object_xy = np.array([positions[kp.label][:2] for kp in object_kps]).reshape(-1, 2)

    removed = set()
    for kp in scene.keypoints:
        if kp.object_id in manipulable_ids or len(object_xy) == 0:
            continue
        distances = np.linalg.norm(object_xy - positions[kp.label][:2], axis=1)
        if np.any(distances < min_separation):
            removed.add(kp.label)

    kept_xy: List[np.ndarray] = []
    for kp in object_kps:
        xy = positions[kp.label][:2]
        if any(np.linalg.norm(xy - other) < min_separation for other in kept_xy):
            removed.add(kp.label)
        else:
            kept_xy.append(xy)

    if removed:
        logger.debug(f"Pruned keypoints {sorted(removed)}")
    return replace(scene, keypoints=[kp for kp in scene.keypoints if kp.label not in removed])


def _pose_from_spec(spec: PoseSpec) -> Pose:
    if spec.orientation is not None:
        return Pose(np.array(spec.position), np.array(spec.orientation))
    return Pose(np.array(spec.position), quat_from_yaw(spec.yaw or 0.0))


def scene_from_file(scene_file: SceneFile) -> SceneModel:
    """Build a SceneModel (without keypoints) from a validated scene file"""
    objects = [
        ObjectModel(o.id, np.array(o.half_extents), o.manipulable, _pose_from_spec(o.pose), o.color_tag)
        for o in scene_file.objects
    ]
    regions = [StaticRegion(r.object_id, tuple(r.rect), r.spacing or DEFAULT_KEYPOINT_SPACING)
               for r in scene_file.static_regions]
    home = np.array(scene_file.gripper_home) if scene_file.gripper_home is not None else None
    return SceneModel(objects, np.array(scene_file.workspace.min), np.array(scene_file.workspace.max),
                      static_regions=regions, gripper_home=home)


def load_scene(source: Union[str, Path, dict, SceneFile]) -> SceneModel:
    """Load a scene JSON (path, dict or parsed model) without keypoints"""
    if isinstance(source, SceneFile):
        scene_file = source
    elif isinstance(source, dict):
        scene_file = SceneFile.model_validate(source)
    else:
        scene_file = SceneFile.model_validate(json.loads(Path(source).read_text(encoding="utf-8")))
    return scene_from_file(scene_file)


def prepare_keypoints(scene: SceneModel, min_separation: float = DEFAULT_MIN_SEPARATION) -> SceneModel:
    """Fresh labeling for the current object poses: sample, label and prune"""
    return prune_and_label(build_keypoints(scene), min_separation)


def object_spec_of(obj: ObjectModel) -> ObjectSpec:
    """Scene-file form of an object (used when writing carried-over scene states)"""
    return ObjectSpec(
        id=obj.id,
        half_extents=tuple(float(h) for h in obj.half_extents),
        pose=PoseSpec(position=tuple(float(p) for p in obj.initial_pose.position),
                      orientation=tuple(float(q) for q in obj.initial_pose.orientation)),
        manipulable=obj.manipulable,
        color_tag=obj.color_tag,
    )


def keypoint_blocks(keypoints: Iterable[Keypoint]) -> Dict[str, List[int]]:
    """Labels grouped by owning object, in label order"""
    blocks: Dict[str, List[int]] = {}
    for kp in sorted(keypoints, key=lambda k: k.label):
        blocks.setdefault(kp.object_id, []).append(kp.label)
    return blocks
