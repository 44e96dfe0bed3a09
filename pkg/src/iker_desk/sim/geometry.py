"""
Rigid-body geometry - poses, quaternions, keypoint transforms and action integration
All functions accept leading batch dimensions: vectors (..., 3), quaternions (..., 4) in (w, x, y, z)
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

ArrayLike = Union[np.ndarray, list, tuple]

MAX_TRANSLATION_STEP = 0.02  # m per control step
MAX_ROTATION_STEP = 0.1  # rad per control step


def _rotation(q: ArrayLike) -> Tuple[Rotation, Tuple[int, ...]]:
    q = np.asarray(q, dtype=np.float64)
    flat = q.reshape(-1, 4)
    return Rotation.from_quat(flat[:, [1, 2, 3, 0]]), q.shape[:-1]


def _quat_from_rotation(rot: Rotation, shape: Tuple[int, ...]) -> np.ndarray:
    xyzw = np.asarray(rot.as_quat()).reshape(shape + (4,))
    return canonical_quat(xyzw[..., [3, 0, 1, 2]])


def canonical_quat(q: ArrayLike) -> np.ndarray:
    """Unit quaternion with non-negative scalar part"""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_multiply(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Hamilton product a ⊗ b (apply b first, then a)"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    shape = np.broadcast_shapes(a.shape, b.shape)
    ra, _ = _rotation(np.broadcast_to(a, shape))
    rb, _ = _rotation(np.broadcast_to(b, shape))
    return _quat_from_rotation(ra * rb, shape[:-1])


def quat_conjugate(q: ArrayLike) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: ArrayLike) -> np.ndarray:
    rot, shape = _rotation(q)
    return np.asarray(rot.as_matrix()).reshape(shape + (3, 3))


def rotate(q: ArrayLike, v: ArrayLike) -> np.ndarray:
    """Rotate vectors by quaternions; extra vector dimensions broadcast after the batch dims"""
    matrix = quat_to_matrix(q)
    v = np.asarray(v, dtype=np.float64)
    while matrix.ndim - 2 < v.ndim - 1:
        matrix = matrix[..., None, :, :]
    return np.einsum("...ij,...j->...i", matrix, v)


def exp_map(rotvec: ArrayLike) -> np.ndarray:
    """Axis-angle rotation vector to unit quaternion"""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    shape = rotvec.shape[:-1]
    rot = Rotation.from_rotvec(rotvec.reshape(-1, 3))
    return _quat_from_rotation(rot, shape)


def log_map(q: ArrayLike) -> np.ndarray:
    rot, shape = _rotation(q)
    return np.asarray(rot.as_rotvec()).reshape(shape + (3,))


def quat_from_yaw(yaw: ArrayLike) -> np.ndarray:
    yaw = np.asarray(yaw, dtype=np.float64)
    half = 0.5 * yaw
    zeros = np.zeros_like(half)
    return canonical_quat(np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1))


def yaw_of(q: ArrayLike) -> np.ndarray:
    """Heading of the body x axis projected on the table plane"""
    matrix = quat_to_matrix(q)
    return np.arctan2(matrix[..., 1, 0], matrix[..., 0, 0])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis roll (x), pitch (y), yaw (z) angles in radians"""
    rot = Rotation.from_euler("xyz", [roll, pitch, yaw])
    return _quat_from_rotation(rot, ())


def rpy_of(q: ArrayLike) -> np.ndarray:
    rot, shape = _rotation(q)
    return np.asarray(rot.as_euler("xyz")).reshape(shape + (3,))


@dataclass(frozen=True)
class Pose:
    """Position (m) plus unit quaternion (w, x, y, z); fields may carry batch dimensions"""
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        position = np.asarray(self.position, dtype=np.float64)
        if not np.all(np.isfinite(position)):
            raise ValueError("pose position must be finite")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "orientation", canonical_quat(self.orientation))

    @classmethod
    def identity(cls, batch_shape: Tuple[int, ...] = ()) -> "Pose":
        position = np.zeros(batch_shape + (3,))
        orientation = np.zeros(batch_shape + (4,))
        orientation[..., 0] = 1.0
        return cls(position, orientation)

    @classmethod
    def from_xyz_yaw(cls, position: ArrayLike, yaw: ArrayLike = 0.0) -> "Pose":
        return cls(np.asarray(position, dtype=np.float64), quat_from_yaw(yaw))

    def __getitem__(self, index) -> "Pose":
        return Pose(self.position[index], self.orientation[index])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation], axis=-1)


@dataclass(frozen=True)
class ActionDelta:
    """Per-step end-effector command: translation dp (m) and world-frame rotation vector dr (rad)"""
    dp: np.ndarray
    dr: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dp", np.asarray(self.dp, dtype=np.float64))
        object.__setattr__(self, "dr", np.asarray(self.dr, dtype=np.float64))

    @classmethod
    def zero(cls, batch_shape: Tuple[int, ...] = ()) -> "ActionDelta":
        return cls(np.zeros(batch_shape + (3,)), np.zeros(batch_shape + (3,)))

    @classmethod
    def from_vector(cls, vector: ArrayLike) -> "ActionDelta":
        vector = np.asarray(vector, dtype=np.float64)
        return cls(vector[..., :3], vector[..., 3:6])

    def inverse(self) -> "ActionDelta":
        return ActionDelta(-self.dp, -self.dr)


def _clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(norm > limit, limit / np.maximum(norm, 1e-12), 1.0)
    return v * scale


def clip_action(action: ActionDelta, max_translation: float = MAX_TRANSLATION_STEP,
                max_rotation: float = MAX_ROTATION_STEP) -> ActionDelta:
    """Norm-clip both action components to the per-step bounds"""
    return ActionDelta(_clip_norm(action.dp, max_translation), _clip_norm(action.dr, max_rotation))


def transform_point(pose: Pose, local: ArrayLike) -> np.ndarray:
    """R(q)·local + p; local may carry an extra point dimension (..., K, 3)"""
    local = np.asarray(local, dtype=np.float64)
    position = pose.position
    rotated = rotate(pose.orientation, local)
    while position.ndim < rotated.ndim:
        position = position[..., None, :]
    return rotated + position


def compose(a: Pose, b: Pose) -> Pose:
    """a ∘ b: first b, then a"""
    return Pose(a.position + rotate(a.orientation, b.position),
                quat_multiply(a.orientation, b.orientation))


def invert(pose: Pose) -> Pose:
    inverse_q = quat_conjugate(pose.orientation)
    return Pose(-rotate(inverse_q, pose.position), inverse_q)


def integrate_action(pose: Pose, action: ActionDelta) -> Pose:
    """position += dp; orientation = exp(dr) ⊗ orientation"""
    return Pose(pose.position + action.dp,
                quat_multiply(exp_map(action.dr), pose.orientation))
