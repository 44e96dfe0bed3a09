"""
Evaluation of validated keypoint programs
"""

from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from ..sim.geometry import Pose
from ..sim.scene import SceneModel
from .pose_baseline import pose_program_to_targets, poses_of_program
from .program import (Add, Centroid, Directive, Expr, KeypointProgram, Kp, Mid, Mul, Number, OffsetAlong,
                      PoseProgram, Sub, Vec)


def evaluate(node: Expr, keypoints: Mapping[int, np.ndarray]):
    """Value of an expression; keypoint arrays may carry leading batch dimensions"""
    if isinstance(node, Number):
        return node.value
    if isinstance(node, Kp):
        return np.asarray(keypoints[node.label], dtype=np.float64)
    if isinstance(node, Vec):
        return np.array([node.x, node.y, node.z])
    if isinstance(node, Add):
        return evaluate(node.left, keypoints) + evaluate(node.right, keypoints)
    if isinstance(node, Sub):
        return evaluate(node.left, keypoints) - evaluate(node.right, keypoints)
    if isinstance(node, Mul):
        return evaluate(node.left, keypoints) * evaluate(node.right, keypoints)
    if isinstance(node, Mid):
        return 0.5 * (evaluate(node.a, keypoints) + evaluate(node.b, keypoints))
    if isinstance(node, Centroid):
        return np.mean([np.asarray(keypoints[label], dtype=np.float64) for label in node.labels], axis=0)
    if isinstance(node, OffsetAlong):
        a = np.asarray(keypoints[node.a], dtype=np.float64)
        b = np.asarray(keypoints[node.b], dtype=np.float64)
        delta = b - a
        norm = np.linalg.norm(delta, axis=-1, keepdims=True)
        unit = np.where(norm > 1e-12, delta / np.maximum(norm, 1e-12), 0.0)
        return a + node.distance * unit
    raise TypeError(f"cannot evaluate {node!r}")


def interpret(program: KeypointProgram,
              keypoints: Mapping[int, np.ndarray]) -> Tuple[Dict[int, np.ndarray], bool, Optional[Directive]]:
    """
    Execute a program on observed keypoint positions

    Args:
        program: Program validated against the scene that produced the keypoints
        keypoints: World position per label

    Returns:
        (targets per assigned label, done flag, directive)
    """
    targets = {stmt.label: evaluate(stmt.expr, keypoints) for stmt in program.statements}
    return targets, program.done, program.directive


def program_targets(program: Union[KeypointProgram, PoseProgram], scene: SceneModel,
                    object_poses: Optional[Mapping[str, Pose]] = None) -> Dict[int, np.ndarray]:
    """Keypoint targets of either program form, evaluated at the given (or initial) object poses"""
    if program.done or program.directive is None:
        raise ValueError("program has no targets")
    if isinstance(program, KeypointProgram):
        targets, _, _ = interpret(program, scene.keypoint_positions(object_poses))
        return targets
    return pose_program_to_targets(poses_of_program(program), scene)
