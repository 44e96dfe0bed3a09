"""
Quasi-static tabletop simulator
Kinematic carrying, penetration-resolution pushing and surface settling over a batch of environments
"""

import logging
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import DomainRandomizationConfig, SimulatorConfig
from .geometry import (ActionDelta, Pose, clip_action, compose, exp_map, invert, quat_from_yaw,
                       quat_multiply, rotate, yaw_of)
from .scene import SceneModel

logger = logging.getLogger(__name__)

FRICTION_SATURATION = 1.8  # upper end of the friction randomization range
MIN_SLIP, MAX_SLIP = 0.3, 1.0
TOP_DOWN = np.array([0.0, 1.0, 0.0, 0.0])  # gripper z axis pointing at the table
RESOLUTION_PASSES = 3

_BOX_CORNERS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)


class UnplaceableSceneError(RuntimeError):
    """Objects keep overlapping after every placement attempt"""


class NotManipulableError(ValueError):
    """Grasp requested on a static object"""


def slip_factor(friction: np.ndarray) -> np.ndarray:
    """Share of the gripper penetration transferred to the object"""
    return np.clip(np.asarray(friction) / FRICTION_SATURATION, MIN_SLIP, MAX_SLIP)


@dataclass
class EpisodeParams:
    """Per-environment (N) and per-object (M) randomized parameters"""
    scale: np.ndarray  # (N, M)
    mass: np.ndarray  # (N, M) kg
    friction: np.ndarray  # (N, M)
    restitution: np.ndarray  # (N, M)
    compliance: np.ndarray  # (N, M)
    com_offset: np.ndarray  # (N, M, 3) m
    initial_position_noise: np.ndarray  # (N, M, 3) m
    initial_orientation_noise: np.ndarray  # (N, M) rad about z
    gripper_position_noise: np.ndarray  # (N, 3) m
    grasp_position_noise: np.ndarray  # (N, 3) m, object frame
    grasp_orientation_noise: np.ndarray  # (N,) rad about the gripper z axis

    @property
    def num_envs(self) -> int:
        return self.scale.shape[0]

    def env(self, index: int) -> "EpisodeParams":
        return EpisodeParams(**{f.name: getattr(self, f.name)[index:index + 1] for f in fields(self)})

    def copy(self) -> "EpisodeParams":
        return EpisodeParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def assign(self, index: int, other: "EpisodeParams") -> None:
        """Overwrite environment index with the first environment of other"""
        for f in fields(self):
            getattr(self, f.name)[index] = getattr(other, f.name)[0]


@dataclass
class SimState:
    """Batched simulator state; objects are the scene's manipulable objects in file order"""
    object_ids: Tuple[str, ...]
    gripper_position: np.ndarray  # (N, 3)
    gripper_orientation: np.ndarray  # (N, 4)
    gripper_open: np.ndarray  # (N,) bool
    grasped: np.ndarray  # (N,) int, -1 when nothing is held
    grasp_position: np.ndarray  # (N, 3) object position in the gripper frame
    grasp_orientation: np.ndarray  # (N, 4)
    object_position: np.ndarray  # (N, M, 3)
    object_orientation: np.ndarray  # (N, M, 4)
    step_count: np.ndarray  # (N,) int
    contact_impulse_sum: np.ndarray  # (N,)
    dropped: np.ndarray  # (N,) bool
    out_of_workspace: np.ndarray  # (N,) bool

    @property
    def num_envs(self) -> int:
        return self.gripper_position.shape[0]

    def copy(self) -> "SimState":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        return SimState(**{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in values.items()})

    def env(self, index: int) -> "SimState":
        values = {}
        for f in fields(self):
            value = getattr(self, f.name)
            values[f.name] = value[index:index + 1].copy() if isinstance(value, np.ndarray) else value
        return SimState(**values)

    def assign(self, index: int, other: "SimState") -> None:
        """Overwrite environment index with the first environment of other"""
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                value[index] = getattr(other, f.name)[0]

    def where(self, mask: np.ndarray, other: "SimState") -> "SimState":
        """Per-environment selection: self where mask is true, other elsewhere"""
        mask = np.asarray(mask, dtype=bool)
        values = {}
        for f in fields(self):
            mine, theirs = getattr(self, f.name), getattr(other, f.name)
            if isinstance(mine, np.ndarray):
                values[f.name] = np.where(mask.reshape((-1,) + (1,) * (mine.ndim - 1)), mine, theirs)
            else:
                values[f.name] = mine
        return SimState(**values)

    def fresh_episode(self) -> "SimState":
        """Copy with poses and grasp kept and the per-episode counters and violation flags cleared"""
        new = self.copy()
        new.step_count = np.zeros_like(self.step_count)
        new.contact_impulse_sum = np.zeros_like(self.contact_impulse_sum)
        new.dropped = np.zeros_like(self.dropped)
        new.out_of_workspace = np.zeros_like(self.out_of_workspace)
        return new

    def object_index(self, object_id: str) -> int:
        try:
            return self.object_ids.index(object_id)
        except ValueError:
            raise KeyError(f"unknown manipulable object {object_id}") from None

    def object_pose(self, object_id: str) -> Pose:
        j = self.object_index(object_id)
        return Pose(self.object_position[:, j], self.object_orientation[:, j])

    @property
    def gripper_pose(self) -> Pose:
        return Pose(self.gripper_position, self.gripper_orientation)

    def grasped_object(self, env: int = 0) -> Optional[str]:
        index = int(self.grasped[env])
        return self.object_ids[index] if index >= 0 else None

    def object_poses(self, env: int = 0) -> Dict[str, Pose]:
        return {oid: Pose(self.object_position[env, j], self.object_orientation[env, j])
                for j, oid in enumerate(self.object_ids)}

    def snapshot(self, env: int = 0) -> Dict:
        """JSON-friendly record of one environment"""
        return {
            "step": int(self.step_count[env]),
            "gripper": self.gripper_position[env].tolist() + self.gripper_orientation[env].tolist(),
            "gripper_open": bool(self.gripper_open[env]),
            "grasped_object": self.grasped_object(env),
            "objects": {oid: self.object_position[env, j].tolist() + self.object_orientation[env, j].tolist()
                        for j, oid in enumerate(self.object_ids)},
            "contact_impulse_sum": float(self.contact_impulse_sum[env]),
            "dropped": bool(self.dropped[env]),
            "out_of_workspace": bool(self.out_of_workspace[env]),
        }


def _shift_range(lo: float, hi: float, shift: float) -> Tuple[float, float]:
    offset = shift * (hi - lo)
    return lo + offset, hi + offset


_PHYSICAL_LIMITS = {
    "scale": (0.05, np.inf),
    "mass": (0.01, np.inf),
    "friction": (0.0, np.inf),
    "restitution": (0.0, 1.0),
    "compliance": (0.0, 1.0),
}


def effective_ranges(dr: DomainRandomizationConfig, shift: float = 0.0) -> Dict[str, Tuple[float, float]]:
    """Randomization ranges, optionally shifted by a fraction of their width and clamped to valid values"""
    ranges = {}
    for name in dr.range_names():
        lo, hi = getattr(dr, name)
        if shift:
            lo, hi = _shift_range(lo, hi, shift)
        if name in _PHYSICAL_LIMITS:
            low_limit, high_limit = _PHYSICAL_LIMITS[name]
            lo, hi = float(np.clip(lo, low_limit, high_limit)), float(np.clip(hi, low_limit, high_limit))
        ranges[name] = (lo, hi)
    return ranges


def sample_params(dr: DomainRandomizationConfig, num_objects: int, rngs: Sequence[np.random.Generator],
                  shift: float = 0.0) -> EpisodeParams:
    """Draw EpisodeParams for each environment generator; disabled DR yields midpoints and zero noise"""
    n, m = len(rngs), num_objects
    ranges = effective_ranges(dr, shift)
    if not dr.enabled:
        def mid(name, shape):
            lo, hi = ranges[name]
            return np.full(shape, 0.5 * (lo + hi))
        return EpisodeParams(
            scale=mid("scale", (n, m)), mass=mid("mass", (n, m)), friction=mid("friction", (n, m)),
            restitution=mid("restitution", (n, m)), compliance=mid("compliance", (n, m)),
            com_offset=np.zeros((n, m, 3)), initial_position_noise=np.zeros((n, m, 3)),
            initial_orientation_noise=np.zeros((n, m)), gripper_position_noise=np.zeros((n, 3)),
            grasp_position_noise=np.zeros((n, 3)), grasp_orientation_noise=np.zeros(n),
        )

    def draw(rng, name, size):
        lo, hi = ranges[name]
        return rng.uniform(lo, hi, size=size)

    rows = []
    for rng in rngs:
        rows.append(dict(
            scale=draw(rng, "scale", m), mass=draw(rng, "mass", m), friction=draw(rng, "friction", m),
            restitution=draw(rng, "restitution", m), compliance=draw(rng, "compliance", m),
            com_offset=draw(rng, "com_offset", (m, 3)) * np.array([1.0, 1.0, 0.0]),
            initial_position_noise=draw(rng, "initial_position", (m, 3)) * np.array([1.0, 1.0, 0.0]),
            initial_orientation_noise=draw(rng, "initial_orientation", m),
            gripper_position_noise=draw(rng, "initial_position", 3),
            grasp_position_noise=draw(rng, "grasp_position", 3),
            grasp_orientation_noise=draw(rng, "grasp_orientation", ()),
        ))
    return EpisodeParams(**{name: np.stack([row[name] for row in rows]) for name in rows[0]})


def env_generators(seed: int, num_envs: int) -> List[np.random.Generator]:
    """One independent generator per environment; environment i does not depend on num_envs"""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(num_envs)]


def _rectangles_overlap(c1, yaw1, h1, c2, yaw2, h2) -> bool:
    axes = []
    for yaw in (yaw1, yaw2):
        axes.append(np.array([np.cos(yaw), np.sin(yaw)]))
        axes.append(np.array([-np.sin(yaw), np.cos(yaw)]))
    delta = c2 - c1
    for axis in axes:
        r1 = abs(h1[0] * np.dot(axis, axes[0])) + abs(h1[1] * np.dot(axis, axes[1]))
        r2 = abs(h2[0] * np.dot(axis, axes[2])) + abs(h2[1] * np.dot(axis, axes[3]))
        if abs(np.dot(delta, axis)) >= r1 + r2:
            return False
    return True


class TabletopSimulator:
    """Deterministic quasi-static simulator for one scene; holds no episode state"""

    def __init__(self, scene: SceneModel, sim_config: Optional[SimulatorConfig] = None):
        self.scene = scene
        self.config = sim_config or SimulatorConfig()
        self.objects = scene.manipulable_objects
        self.object_ids = tuple(obj.id for obj in self.objects)
        self.half_extents = np.array([obj.half_extents for obj in self.objects]).reshape(-1, 3)
        home = scene.gripper_home if scene.gripper_home is not None else self.config.gripper_home
        self.home_position = np.asarray(home, dtype=np.float64)

    # Episode setup

    def reset(self, dr: DomainRandomizationConfig, seed: int, num_envs: int = 1,
              shift: float = 0.0) -> Tuple[SimState, EpisodeParams]:
        """
        Place objects and gripper for a batch of environments

        Args:
            dr: Randomization ranges
            seed: Base seed; environment i uses the i-th spawned child sequence
            num_envs: Batch size
            shift: Fraction of each range width added to its center (deployment proxy)

        Returns:
            Initial state and the sampled parameters
        """
        rngs = env_generators(seed, num_envs)
        params = sample_params(dr, len(self.objects), rngs, shift)
        n, m = num_envs, len(self.objects)

        base_position = np.array([obj.initial_pose.position for obj in self.objects]).reshape(m, 3)
        base_orientation = np.array([obj.initial_pose.orientation for obj in self.objects]).reshape(m, 4)
        base_yaw = yaw_of(base_orientation) if m else np.zeros(0)

        clearance = 0.5 * self.config.min_object_clearance
        touching = self._overlapping(base_position[:, :2], base_yaw, self.half_extents)
        if touching and not self.config.reject_initial_overlap:
            logger.debug("Scene starts with touching objects; skipping placement checks")
        for i in range(n if not touching or self.config.reject_initial_overlap else 0):
            for attempt in range(self.config.placement_attempts):
                if not self._overlapping(base_position[:, :2] + params.initial_position_noise[i, :, :2],
                                         base_yaw + params.initial_orientation_noise[i],
                                         self.half_extents * params.scale[i, :, None] + clearance):
                    break
                if not dr.enabled:
                    raise UnplaceableSceneError("unplaceable scene")
                resampled = sample_params(dr, m, [rngs[i]], shift)
                params.initial_position_noise[i] = resampled.initial_position_noise[0]
                params.initial_orientation_noise[i] = resampled.initial_orientation_noise[0]
            else:
                raise UnplaceableSceneError("unplaceable scene")

        object_position = base_position[None] + params.initial_position_noise
        object_position[..., 2] += (params.scale - 1.0) * self.half_extents[None, :, 2]
        noise_q = quat_from_yaw(params.initial_orientation_noise)
        object_orientation = np.where(
            (params.initial_orientation_noise != 0.0)[..., None],
            quat_multiply(noise_q, np.broadcast_to(base_orientation, (n, m, 4))),
            np.broadcast_to(base_orientation, (n, m, 4)),
        )

        gripper_position = np.clip(self.home_position[None] + params.gripper_position_noise,
                                   self.scene.workspace_min, self.scene.workspace_max)
        state = SimState(
            object_ids=self.object_ids,
            gripper_position=gripper_position,
            gripper_orientation=np.tile(TOP_DOWN, (n, 1)),
            gripper_open=np.zeros(n, dtype=bool),
            grasped=np.full(n, -1, dtype=np.int64),
            grasp_position=np.zeros((n, 3)),
            grasp_orientation=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
            object_position=object_position,
            object_orientation=np.array(object_orientation),
            step_count=np.zeros(n, dtype=np.int64),
            contact_impulse_sum=np.zeros(n),
            dropped=np.zeros(n, dtype=bool),
            out_of_workspace=np.zeros(n, dtype=bool),
        )
        return state, params

    def _overlapping(self, centers, yaws, half_extents) -> bool:
        m = len(centers)
        for a in range(m):
            for b in range(a + 1, m):
                if _rectangles_overlap(centers[a], yaws[a], half_extents[a], centers[b], yaws[b], half_extents[b]):
                    return True
        return False

    # Stepping

    def step(self, state: SimState, action: ActionDelta, params: EpisodeParams) -> SimState:
        """
        Advance every environment by one control step

        Args:
            state: Current batched state (not modified)
            action: Batched end-effector deltas, clipped to the per-step bounds here
            params: Episode parameters of the batch

        Returns:
            New state
        """
        cfg = self.config
        new = state.copy()
        action = clip_action(ActionDelta(np.broadcast_to(action.dp, (state.num_envs, 3)),
                                         np.broadcast_to(action.dr, (state.num_envs, 3))),
                             cfg.max_translation_step, cfg.max_rotation_step)

        new.gripper_position = self._clip_to_workspace(state.gripper_position + action.dp)
        rotating = np.linalg.norm(action.dr, axis=-1) > 0.0
        if np.any(rotating):
            new.gripper_orientation = np.where(
                rotating[:, None], quat_multiply(exp_map(action.dr), state.gripper_orientation),
                state.gripper_orientation)

        self._carry(new, params)
        self._push(new, params)
        new.step_count = state.step_count + 1
        return new

    def _clip_to_workspace(self, position: np.ndarray) -> np.ndarray:
        return np.clip(position, self.scene.workspace_min, self.scene.workspace_max)

    def _scaled_half_extents(self, params: EpisodeParams, j: int) -> np.ndarray:
        return self.half_extents[j][None] * params.scale[:, j, None]

    def _carry(self, state: SimState, params: EpisodeParams) -> None:
        for j in range(len(self.objects)):
            held = state.grasped == j
            if not np.any(held):
                continue
            half = self._scaled_half_extents(params, j)
            pose = compose(state.gripper_pose, Pose(state.grasp_position, state.grasp_orientation))
            corners = rotate(pose.orientation, _BOX_CORNERS[None] * half[:, None, :]) + pose.position[:, None, :]
            bottom = corners[..., 2].min(axis=1)
            support = self.scene.support_height(pose.position[:, :2])
            deficit = np.where(held, np.maximum(support - bottom, 0.0), 0.0)
            if np.any(deficit > 0.0):
                state.gripper_position = self._clip_to_workspace(
                    state.gripper_position + deficit[:, None] * np.array([0.0, 0.0, 1.0]))
                pose = compose(state.gripper_pose, Pose(state.grasp_position, state.grasp_orientation))
            state.object_position[:, j] = np.where(held[:, None], pose.position, state.object_position[:, j])
            state.object_orientation[:, j] = np.where(held[:, None], pose.orientation, state.object_orientation[:, j])

    def _contact(self, state: SimState, params: EpisodeParams, j: int):
        """Gripper-sphere vs box penetration in the object's horizontal frame"""
        r = self.config.gripper_radius
        half = self._scaled_half_extents(params, j)
        center = state.object_position[:, j]
        yaw = yaw_of(state.object_orientation[:, j])
        cos, sin = np.cos(yaw), np.sin(yaw)
        delta = state.gripper_position[:, :2] - center[:, :2]
        lx = cos * delta[:, 0] + sin * delta[:, 1]
        ly = -sin * delta[:, 0] + cos * delta[:, 1]
        local = np.stack([lx, ly], axis=-1)
        closest = np.clip(local, -half[:, :2], half[:, :2])
        gap = local - closest
        dist = np.linalg.norm(gap, axis=-1)
        inside = np.all(np.abs(local) <= half[:, :2], axis=-1)

        # Outside: normal from the closest surface point towards the gripper
        safe = np.maximum(dist, 1e-12)[:, None]
        normal = gap / safe
        penetration = r - dist
        contact_point = closest

        # Inside: leave through the nearest face
        depth = half[:, :2] - np.abs(local)
        axis = np.argmin(depth, axis=-1)
        sign = np.where(np.take_along_axis(local, axis[:, None], axis=1)[:, 0] >= 0.0, 1.0, -1.0)
        face_normal = np.zeros_like(local)
        face_normal[np.arange(len(axis)), axis] = sign
        face_point = local.copy()
        face_point[np.arange(len(axis)), axis] = sign * np.take_along_axis(half[:, :2], axis[:, None], axis=1)[:, 0]
        normal = np.where(inside[:, None], face_normal, normal)
        penetration = np.where(inside, r + np.take_along_axis(depth, axis[:, None], axis=1)[:, 0], penetration)
        contact_point = np.where(inside[:, None], face_point, contact_point)

        vertical = ((state.gripper_position[:, 2] - r <= center[:, 2] + half[:, 2])
                    & (state.gripper_position[:, 2] + r >= center[:, 2] - half[:, 2]))
        free = state.grasped != j
        touching = free & (state.grasped < 0) & vertical & (penetration > 0.0)
        return touching, penetration, normal, contact_point, cos, sin, half

    @staticmethod
    def _to_world(v: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
        return np.stack([cos * v[:, 0] - sin * v[:, 1], sin * v[:, 0] + cos * v[:, 1]], axis=-1)

    def _push(self, state: SimState, params: EpisodeParams) -> None:
        cfg = self.config
        for j in range(len(self.objects)):
            touching, penetration, normal, contact_point, cos, sin, half = self._contact(state, params, j)
            if not np.any(touching):
                continue
            slip = slip_factor(params.friction[:, j])
            pen = np.where(touching, penetration, 0.0)
            object_move = -normal * (slip * pen)[:, None]
            gripper_back = normal * ((1.0 - slip) * pen)[:, None]

            lever = contact_point - params.com_offset[:, j, :2]
            torque = lever[:, 0] * object_move[:, 1] - lever[:, 1] * object_move[:, 0]
            dyaw = cfg.push_rotation_gain * torque / np.sum(half[:, :2] ** 2, axis=-1)

            moved_xy = state.object_position[:, j, :2] + self._to_world(object_move, cos, sin)
            state.object_position[:, j, :2] = np.where(touching[:, None], moved_xy, state.object_position[:, j, :2])
            turned = quat_multiply(quat_from_yaw(dyaw), state.object_orientation[:, j])
            state.object_orientation[:, j] = np.where(touching[:, None], turned, state.object_orientation[:, j])
            state.gripper_position[:, :2] += np.where(touching[:, None], self._to_world(gripper_back, cos, sin), 0.0)

            impulse = params.mass[:, j] * (1.0 - slip) * pen * (1.0 + params.restitution[:, j]) \
                / (1.0 + params.compliance[:, j])
            state.contact_impulse_sum += np.where(touching, impulse, 0.0)
            self._settle(state, params, j, touching)

            outside = (np.any(state.object_position[:, j, :2] < self.scene.workspace_min[:2], axis=-1)
                       | np.any(state.object_position[:, j, :2] > self.scene.workspace_max[:2], axis=-1))
            state.out_of_workspace |= touching & outside

        self._resolve_penetration(state, params)

    def _resolve_penetration(self, state: SimState, params: EpisodeParams) -> None:
        """
        Remove what the object rotation left behind

        The gripper backs off inside the workspace; where the workspace bound holds it in an
        object, the object gives way instead.
        """
        tolerance = self.config.penetration_tolerance
        for _ in range(RESOLUTION_PASSES):
            for j in range(len(self.objects)):
                touching, penetration, normal, _, cos, sin, _ = self._contact(state, params, j)
                deep = touching & (penetration > tolerance)
                if np.any(deep):
                    back = normal * np.where(deep, penetration, 0.0)[:, None]
                    state.gripper_position[:, :2] += self._to_world(back, cos, sin)
            state.gripper_position = self._clip_to_workspace(state.gripper_position)
            if float(self.penetration_depths(state, params).max(initial=0.0)) <= tolerance:
                return

        for j in range(len(self.objects)):
            touching, penetration, normal, _, cos, sin, _ = self._contact(state, params, j)
            deep = touching & (penetration > tolerance)
            if not np.any(deep):
                continue
            away = -normal * np.where(deep, penetration, 0.0)[:, None]
            state.object_position[:, j, :2] += self._to_world(away, cos, sin)
            outside = (np.any(state.object_position[:, j, :2] < self.scene.workspace_min[:2], axis=-1)
                       | np.any(state.object_position[:, j, :2] > self.scene.workspace_max[:2], axis=-1))
            state.out_of_workspace |= deep & outside

    def penetration_depths(self, state: SimState, params: EpisodeParams) -> np.ndarray:
        """(N, M) gripper-sphere penetration into each free object, 0 where they do not touch"""
        depths = np.zeros((state.num_envs, len(self.objects)))
        for j in range(len(self.objects)):
            touching, penetration, *_ = self._contact(state, params, j)
            depths[:, j] = np.where(touching, penetration, 0.0)
        return depths

    def _settle(self, state: SimState, params: EpisodeParams, j: int, mask: np.ndarray) -> None:
        """Flatten the object onto the support below its center"""
        half = self._scaled_half_extents(params, j)
        support = self.scene.support_height(state.object_position[:, j, :2])
        flat = quat_from_yaw(yaw_of(state.object_orientation[:, j]))
        state.object_position[:, j, 2] = np.where(mask, support + half[:, 2], state.object_position[:, j, 2])
        state.object_orientation[:, j] = np.where(mask[:, None], flat, state.object_orientation[:, j])

    # Grasping

    def try_grasp(self, state: SimState, target: str, params: EpisodeParams) -> SimState:
        """
        Heuristic top-down grasp with randomized attachment

        The gripper approaches the object center aligned with the shorter horizontal axis; the
        grasp point is perturbed by the sampled noise and succeeds only inside the object's band.
        """
        if target not in self.object_ids:
            if target in [obj.id for obj in self.scene.static_objects]:
                raise NotManipulableError("not manipulable")
            raise KeyError(f"unknown object id {target}")
        j = self.object_ids.index(target)
        new = state.copy()
        free = state.grasped < 0

        half = self._scaled_half_extents(params, j)
        object_pose = Pose(state.object_position[:, j], state.object_orientation[:, j])
        offset = params.grasp_position_noise
        yaw = yaw_of(object_pose.orientation)
        across = np.where(half[:, 1] <= half[:, 0], np.pi / 2.0, 0.0)
        gripper_q = quat_multiply(quat_from_yaw(yaw + across + params.grasp_orientation_noise),
                                  np.broadcast_to(TOP_DOWN, (state.num_envs, 4)))
        gripper_p = object_pose.position + rotate(object_pose.orientation, offset)

        new.gripper_position = np.where(free[:, None], gripper_p, state.gripper_position)
        new.gripper_orientation = np.where(free[:, None], gripper_q, state.gripper_orientation)
        inside_band = np.all(np.abs(offset) < half, axis=-1)
        success = free & inside_band

        grasp = compose(invert(Pose(gripper_p, gripper_q)), object_pose)
        new.grasped = np.where(success, j, state.grasped)
        new.gripper_open = np.where(free, ~success, state.gripper_open)
        new.grasp_position = np.where(success[:, None], grasp.position, state.grasp_position)
        new.grasp_orientation = np.where(success[:, None], grasp.orientation, state.grasp_orientation)
        failed = int(np.sum(free & ~inside_band))
        if failed:
            logger.debug(f"Grasp on {target} missed the graspable band in {failed}/{state.num_envs} envs")
        return new

    def release(self, state: SimState, params: EpisodeParams, unexpected: bool = False,
                mask: Optional[np.ndarray] = None) -> SimState:
        """Open the gripper and let the held object settle; unexpected releases of lifted objects count as drops"""
        new = state.copy()
        mask = np.ones(state.num_envs, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        for j in range(len(self.objects)):
            releasing = mask & (state.grasped == j)
            if not np.any(releasing):
                continue
            half = self._scaled_half_extents(params, j)
            support = self.scene.support_height(state.object_position[:, j, :2])
            lifted = state.object_position[:, j, 2] - (support + half[:, 2]) > self.config.drop_height_tolerance
            if unexpected:
                new.dropped |= releasing & lifted
            self._settle(new, params, j, releasing)
        released = mask & (state.grasped >= 0)
        new.grasped = np.where(released, -1, state.grasped)
        new.gripper_open = np.where(released, True, state.gripper_open)
        return new

    def teleport_object(self, state: SimState, object_id: str, pose: Pose, params: EpisodeParams,
                        mask: Optional[np.ndarray] = None) -> SimState:
        """Move an object by hand (disturbance); a held object is let go without counting as a drop"""
        j = state.object_index(object_id)
        new = state.copy()
        mask = np.ones(state.num_envs, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        holding = mask & (state.grasped == j)
        new.grasped = np.where(holding, -1, state.grasped)
        new.gripper_open = np.where(holding, True, state.gripper_open)
        new.object_position[:, j] = np.where(mask[:, None], pose.position, state.object_position[:, j])
        new.object_orientation[:, j] = np.where(mask[:, None], pose.orientation, state.object_orientation[:, j])
        self._settle(new, params, j, mask)
        return new

    # Observation

    def object_keypoints(self, state: SimState, params: EpisodeParams, object_id: str,
                         local: np.ndarray, object_pose: Optional[Pose] = None) -> np.ndarray:
        """World keypoints (N, K, 3) of an object given nominal local coordinates (K, 3)"""
        j = state.object_index(object_id)
        pose = object_pose if object_pose is not None else state.object_pose(object_id)
        scaled = np.asarray(local)[None] * params.scale[:, j, None, None]
        rotated = rotate(pose.orientation, scaled)
        return rotated + pose.position[:, None, :]

    def observe_object_poses(self, state: SimState, rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, np.ndarray]:
        """Object poses as a pose tracker would report them; rng None means exact"""
        position = state.object_position.copy()
        orientation = state.object_orientation.copy()
        if rng is not None:
            position = position + rng.normal(0.0, self.config.proxy_position_noise, size=position.shape)
            noise = exp_map(rng.normal(0.0, self.config.proxy_orientation_noise, size=position.shape))
            orientation = quat_multiply(noise, orientation)
        return position, orientation


def deployment_shift(sim_config: SimulatorConfig) -> float:
    return sim_config.proxy_shift_fraction


def proxy_randomization(dr: DomainRandomizationConfig) -> DomainRandomizationConfig:
    """Deployment-proxy sampling always randomizes, whatever the training run used"""
    return dr.model_copy(update={"enabled": True})


def sample_deployment_params(scene: SceneModel, dr: DomainRandomizationConfig, seed: int, num_envs: int = 1,
                             sim_config: Optional[SimulatorConfig] = None) -> EpisodeParams:
    """Parameters drawn from the shifted deployment-proxy distribution"""
    sim_config = sim_config or SimulatorConfig()
    return sample_params(proxy_randomization(dr), len(scene.manipulable_objects),
                         env_generators(seed, num_envs), deployment_shift(sim_config))


def observe(simulator: TabletopSimulator, state: SimState,
            rng: Optional[np.random.Generator] = None) -> Dict[str, Pose]:
    """Object poses of environment 0 as reported to the planner and the policy"""
    position, orientation = simulator.observe_object_poses(state, rng)
    return {oid: Pose(position[0, j], orientation[0, j]) for j, oid in enumerate(state.object_ids)}
