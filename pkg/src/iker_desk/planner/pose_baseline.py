"""
Pose-based baseline
Target object poses (xyz + roll-pitch-yaw) converted into keypoint targets for the shared reward
"""

from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from ..sim.geometry import Pose, quat_from_rpy, quat_from_yaw, transform_point
from ..sim.scene import SceneModel
from .program import PoseProgram


def pose_program_to_targets(pose_targets: Mapping[str, Pose], scene: SceneModel) -> Dict[int, np.ndarray]:
    """Each object's unpruned keypoints carried by its target pose"""
    targets: Dict[int, np.ndarray] = {}
    for object_id, pose in pose_targets.items():
        obj = scene.object(object_id)
        if not obj.manipulable:
            raise ValueError(f"object {object_id} is static and has no pose target")
        for kp in scene.keypoints_of(object_id):
            targets[kp.label] = transform_point(pose, kp.local)
    return targets


def poses_of_program(program: PoseProgram) -> Dict[str, Pose]:
    return {
        p.object_id: Pose(np.array(p.values[:3]), quat_from_rpy(*p.values[3:]))
        for p in program.poses
    }


def poses_from_rows(rows: Iterable[Tuple[str, float, float, float, float]]) -> Dict[str, Pose]:
    """(object_id, x, y, z, yaw) rows as stored with benchmark configurations"""
    return {object_id: Pose(np.array([x, y, z]), quat_from_yaw(yaw)) for object_id, x, y, z, yaw in rows}
