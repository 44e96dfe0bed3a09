"""
Keypoint reward
Five weighted terms over interaction-object keypoints, their targets and simulator violation signals
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..config import RewardConfig, SimulatorConfig
from ..sim.scene import SceneModel
from ..sim.simulator import EpisodeParams, SimState, TabletopSimulator

logger = logging.getLogger(__name__)


class RewardSpecError(ValueError):
    """Reward targets do not match the labeled scene"""


@dataclass(frozen=True)
class RewardWeights:
    alpha_dist: float = 0.1
    alpha_dir: float = 0.5
    alpha_align: float = 1.0
    alpha_bonus: float = 10.0
    alpha_penalty: float = 1.0

    def __post_init__(self):
        values = [self.alpha_dist, self.alpha_dir, self.alpha_align, self.alpha_bonus, self.alpha_penalty]
        if not np.all(np.isfinite(values)):
            raise ValueError("reward weights must be finite")
        if self.alpha_bonus <= 0:
            raise ValueError("alpha_bonus must be positive")

    @classmethod
    def from_config(cls, reward_config: RewardConfig) -> "RewardWeights":
        return cls(reward_config.alpha_dist, reward_config.alpha_dir, reward_config.alpha_align,
                   reward_config.alpha_bonus, reward_config.alpha_penalty)


@dataclass(frozen=True)
class RewardSpec:
    """Targets per keypoint label for one interaction object"""
    targets: Dict[int, np.ndarray]
    interaction_object: str
    success_threshold: float = 0.05
    hold_steps: int = 10
    weights: RewardWeights = field(default_factory=RewardWeights)
    move_threshold: float = 0.02
    force_threshold: float = 0.5

    def __post_init__(self):
        if not self.targets:
            raise ValueError("reward spec needs at least one target")
        if self.success_threshold <= 0:
            raise ValueError("success_threshold must be positive")
        if self.hold_steps < 1:
            raise ValueError("hold_steps must be at least 1")
        targets = {int(label): np.asarray(t, dtype=np.float64) for label, t in self.targets.items()}
        object.__setattr__(self, "targets", targets)

    @classmethod
    def from_config(cls, targets: Mapping[int, np.ndarray], interaction_object: str,
                    reward_config: Optional[RewardConfig] = None,
                    sim_config: Optional[SimulatorConfig] = None) -> "RewardSpec":
        reward_config = reward_config or RewardConfig()
        sim_config = sim_config or SimulatorConfig()
        return cls(dict(targets), interaction_object, reward_config.success_threshold,
                   reward_config.hold_steps, RewardWeights.from_config(reward_config),
                   reward_config.move_threshold, sim_config.force_threshold)

    @property
    def labels(self) -> Tuple[int, ...]:
        return tuple(sorted(self.targets))

    def target_array(self) -> np.ndarray:
        """Targets (K, 3) or (N, K, 3) in label order"""
        return np.stack([self.targets[label] for label in self.labels], axis=-2)


@dataclass
class RewardBreakdown:
    """Reward terms; arrays over environments when evaluated in batch"""
    r_dist: np.ndarray
    r_dir: np.ndarray
    r_align: np.ndarray
    r_bonus: np.ndarray
    r_penalty: np.ndarray
    total: np.ndarray
    mean_target_distance: np.ndarray
    success_latched: np.ndarray

    def as_dict(self, env: int = 0) -> Dict[str, float]:
        return {
            "r_dist": float(self.r_dist[env]),
            "r_dir": float(self.r_dir[env]),
            "r_align": float(self.r_align[env]),
            "r_bonus": float(self.r_bonus[env]),
            "r_penalty": float(self.r_penalty[env]),
            "total": float(self.total[env]),
            "mean_target_distance": float(self.mean_target_distance[env]),
            "success_latched": bool(self.success_latched[env]),
        }


def validate_spec(spec: RewardSpec, scene: SceneModel) -> None:
    """Every target label must be an unpruned keypoint of the interaction object"""
    owned = {kp.label for kp in scene.keypoints_of(spec.interaction_object)}
    for label in spec.labels:
        if label not in owned:
            raise RewardSpecError("target references pruned keypoint")


def mean_target_distance(keypoints: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Mean Euclidean keypoint-to-target distance over the last-but-one axis"""
    return np.mean(np.linalg.norm(np.asarray(keypoints) - np.asarray(targets), axis=-1), axis=-1)


def combine(weights: RewardWeights, r_dist, r_dir, r_align, r_bonus, r_penalty) -> np.ndarray:
    return (weights.alpha_dist * r_dist + weights.alpha_dir * r_dir + weights.alpha_align * r_align
            + weights.alpha_bonus * r_bonus - weights.alpha_penalty * r_penalty)


def reward_terms(prev_keypoints: np.ndarray, cur_keypoints: np.ndarray, targets: np.ndarray,
                 gripper_position: np.ndarray, object_center: np.ndarray, gripper_displacement: np.ndarray,
                 dropped: np.ndarray, contact_impulse_sum: np.ndarray, spec: RewardSpec,
                 hold_counter: np.ndarray, latched: Optional[np.ndarray] = None,
                 max_translation_step: float = 0.02) -> Tuple[RewardBreakdown, np.ndarray]:
    """
    Evaluate the reward from raw arrays

    Args:
        prev_keypoints: (N, K, 3) keypoints before the step
        cur_keypoints: (N, K, 3) keypoints after the step
        targets: (K, 3) or (N, K, 3)
        gripper_position: (N, 3) after the step
        object_center: (N, 3) interaction object center after the step
        gripper_displacement: (N, 3) gripper motion over the step
        dropped: (N,) drop flags
        contact_impulse_sum: (N,) accumulated contact impulse
        spec: Reward specification
        hold_counter: (N,) consecutive in-threshold steps so far
        latched: (N,) whether the bonus already fired this episode
        max_translation_step: Normalizer for the direction term

    Returns:
        Breakdown and the updated hold counter
    """
    n = cur_keypoints.shape[0]
    targets = np.broadcast_to(targets, cur_keypoints.shape)
    latched = np.zeros(n, dtype=bool) if latched is None else np.asarray(latched, dtype=bool)

    r_dist = -np.linalg.norm(gripper_position - object_center, axis=-1)

    to_target = targets - prev_keypoints
    norm = np.linalg.norm(to_target, axis=-1, keepdims=True)
    direction = np.where(norm > 1e-12, to_target / np.maximum(norm, 1e-12), 0.0)
    progress = np.sum(direction * (cur_keypoints - prev_keypoints), axis=-1)
    r_dir = np.sum(np.maximum(progress, 0.0), axis=-1) / cur_keypoints.shape[1] / max_translation_step

    distance = mean_target_distance(cur_keypoints, targets)
    r_align = -distance

    hold = np.where(distance < spec.success_threshold, np.asarray(hold_counter) + 1, 0)
    fired = (hold == spec.hold_steps) & ~latched
    r_bonus = fired.astype(np.float64)

    r_penalty = ((np.linalg.norm(gripper_displacement, axis=-1) > spec.move_threshold).astype(np.float64)
                 + np.asarray(dropped, dtype=np.float64)
                 + (np.asarray(contact_impulse_sum) > spec.force_threshold).astype(np.float64))

    total = combine(spec.weights, r_dist, r_dir, r_align, r_bonus, r_penalty)
    breakdown = RewardBreakdown(r_dist, r_dir, r_align, r_bonus, r_penalty, total, distance, latched | fired)
    return breakdown, hold


def check_success(final_keypoints: np.ndarray, targets: np.ndarray, success_threshold: float = 0.05) -> np.ndarray:
    """Mean final keypoint distance within the threshold"""
    return mean_target_distance(final_keypoints, targets) <= success_threshold


class KeypointReward:
    """
    Reward evaluator bound to a scene, a reward spec and a batch of episode parameters

    Keypoints are read from the simulator state through the interaction object's pose and the
    per-environment scale, so the reward always sees the same keypoints as the policy.
    """

    def __init__(self, scene: SceneModel, spec: RewardSpec, simulator: TabletopSimulator,
                 params: EpisodeParams, targets: Optional[np.ndarray] = None):
        validate_spec(spec, scene)
        self.scene = scene
        self.spec = spec
        self.simulator = simulator
        self.params = params
        self.labels = spec.labels
        self.local = np.array([scene.keypoint(label).local for label in self.labels])
        self.targets = spec.target_array() if targets is None else np.asarray(targets, dtype=np.float64)

    def keypoints(self, state: SimState) -> np.ndarray:
        return self.simulator.object_keypoints(state, self.params, self.spec.interaction_object, self.local)

    def __call__(self, prev: SimState, cur: SimState, hold_counter: np.ndarray,
                 latched: Optional[np.ndarray] = None) -> Tuple[RewardBreakdown, np.ndarray]:
        j = cur.object_index(self.spec.interaction_object)
        return reward_terms(
            self.keypoints(prev), self.keypoints(cur), self.targets,
            cur.gripper_position, cur.object_position[:, j],
            cur.gripper_position - prev.gripper_position,
            cur.dropped, cur.contact_impulse_sum, self.spec, hold_counter, latched,
            self.simulator.config.max_translation_step,
        )

    def distance(self, state: SimState) -> np.ndarray:
        return mean_target_distance(self.keypoints(state), self.targets)

    def check_success(self, history: Sequence[SimState]) -> np.ndarray:
        """Success per environment judged on the last state of a finished episode"""
        if not history:
            raise ValueError("empty episode history")
        return check_success(self.keypoints(history[-1]), self.targets, self.spec.success_threshold)


def compute_reward(prev: SimState, cur: SimState, spec: RewardSpec, hold_counter: np.ndarray,
                   scene: SceneModel, simulator: TabletopSimulator, params: EpisodeParams,
                   latched: Optional[np.ndarray] = None) -> Tuple[RewardBreakdown, np.ndarray]:
    """One-shot reward evaluation; loops should hold a KeypointReward instead"""
    return KeypointReward(scene, spec, simulator, params)(prev, cur, hold_counter, latched)
