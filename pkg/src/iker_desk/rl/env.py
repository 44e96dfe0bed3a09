"""
Task environments
Policy observations, auto-resetting training batches and deterministic episode evaluation
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from ..config import DomainRandomizationConfig
from ..reward.keypoint_reward import KeypointReward, RewardBreakdown, RewardSpec
from ..sim.geometry import ActionDelta, Pose
from ..sim.scene import SceneModel
from ..sim.simulator import SimState, TabletopSimulator, proxy_randomization

logger = logging.getLogger(__name__)

OBSERVATION_NOISE_STREAM = 1  # generator key for deployment-proxy pose noise


@dataclass(frozen=True)
class TaskDefinition:
    """Everything a policy is trained for: labeled scene, reward targets and interaction directive"""
    scene: SceneModel
    spec: RewardSpec
    directive: str = "push"
    name: str = "task"

    def __post_init__(self):
        if self.directive not in ("grasp", "push"):
            raise ValueError(f"unknown directive {self.directive}")

    @property
    def interaction_object(self) -> str:
        return self.spec.interaction_object


def observation_dim(keypoints_per_policy: int) -> int:
    return 14 + 6 * keypoints_per_policy


def build_observation(state: SimState, reward: KeypointReward, keypoints_per_policy: int,
                      obs_rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Policy observation (p_e, q_e, p_o, q_o, K_o, K_t), slots beyond the target count zero-filled

    Args:
        state: Batched simulator state
        reward: Reward evaluator holding the keypoints and targets
        keypoints_per_policy: Fixed keypoint slot count K
        obs_rng: Pose-noise generator for the deployment proxy; None observes exactly

    Returns:
        (N, 14 + 6K) observations
    """
    simulator = reward.simulator
    j = state.object_index(reward.spec.interaction_object)
    if obs_rng is not None:
        position, orientation = simulator.observe_object_poses(state, obs_rng)
        object_pose = Pose(position[:, j], orientation[:, j])
    else:
        object_pose = state.object_pose(reward.spec.interaction_object)
    keypoints = simulator.object_keypoints(state, reward.params, reward.spec.interaction_object,
                                           reward.local, object_pose)
    n, k = state.num_envs, len(reward.labels)
    if k > keypoints_per_policy:
        raise ValueError(f"{k} targets exceed the policy's {keypoints_per_policy} keypoint slots")
    current = np.zeros((n, keypoints_per_policy, 3))
    targets = np.zeros((n, keypoints_per_policy, 3))
    current[:, :k] = keypoints
    targets[:, :k] = np.broadcast_to(reward.targets, (n, k, 3))
    return np.concatenate([
        state.gripper_position, state.gripper_orientation, object_pose.position, object_pose.orientation,
        current.reshape(n, -1), targets.reshape(n, -1),
    ], axis=1)


@dataclass
class EpisodeOutcome:
    """Per-environment results of finished episodes"""
    success: np.ndarray
    final_distance: np.ndarray
    steps: np.ndarray
    total_reward: np.ndarray
    final_state: Optional[SimState] = None

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.success)) if len(self.success) else 0.0


class TrainingEnvs:
    """
    Batch of randomized episodes that reset individually when they end

    Episode k of environment i is seeded by (seed, i, k), so every episode is reproducible alone.
    """

    def __init__(self, task: TaskDefinition, simulator: TabletopSimulator, dr: DomainRandomizationConfig,
                 num_envs: int, horizon: int, keypoints_per_policy: int = 4, seed: int = 0):
        self.task = task
        self.simulator = simulator
        self.dr = dr
        self.num_envs = num_envs
        self.horizon = horizon
        self.keypoints_per_policy = keypoints_per_policy
        self.seed = seed

        self.state, self.params = simulator.reset(dr, seed, num_envs)
        if task.directive == "grasp":
            self.state = simulator.try_grasp(self.state, task.interaction_object, self.params)
        self.reward = KeypointReward(task.scene, task.spec, simulator, self.params)
        self.hold = np.zeros(num_envs, dtype=np.int64)
        self.latched = np.zeros(num_envs, dtype=bool)
        self.t = np.zeros(num_envs, dtype=np.int64)
        self.episode_index = np.zeros(num_envs, dtype=np.int64)
        self.episode_reward = np.zeros(num_envs)
        self.completed: List[EpisodeOutcome] = []

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.keypoints_per_policy)

    def observe(self) -> np.ndarray:
        return build_observation(self.state, self.reward, self.keypoints_per_policy)

    def _reset_env(self, i: int) -> None:
        self.episode_index[i] += 1
        state, params = self.simulator.reset(self.dr, [self.seed, i, int(self.episode_index[i])], 1)
        if self.task.directive == "grasp":
            state = self.simulator.try_grasp(state, self.task.interaction_object, params)
        self.state.assign(i, state)
        self.params.assign(i, params)
        self.hold[i] = 0
        self.latched[i] = False
        self.t[i] = 0
        self.episode_reward[i] = 0.0

    def step(self, action: np.ndarray):
        """
        Args:
            action: (N, 6) scaled actions

        Returns:
            (next observations, rewards, dones, reward breakdown)
        """
        prev = self.state
        new = self.simulator.step(prev, ActionDelta.from_vector(action), self.params)
        breakdown, self.hold = self.reward(prev, new, self.hold, self.latched)
        self.latched = breakdown.success_latched
        self.t += 1
        self.episode_reward += breakdown.total
        self.state = new

        done = self.latched | (self.t >= self.horizon)
        if np.any(done):
            final = new
            if self.task.directive == "grasp":
                final = self.simulator.release(new, self.params, mask=done)
            distance = self.reward.distance(final)
            self.completed.append(EpisodeOutcome(
                success=(distance <= self.task.spec.success_threshold)[done],
                final_distance=distance[done],
                steps=self.t[done].copy(),
                total_reward=self.episode_reward[done].copy(),
            ))
            for i in np.flatnonzero(done):
                self._reset_env(int(i))
        return self.observe(), breakdown.total, done, breakdown

    def drain_completed(self) -> Optional[EpisodeOutcome]:
        if not self.completed:
            return None
        merged = EpisodeOutcome(*(np.concatenate([getattr(o, name) for o in self.completed])
                                  for name in ("success", "final_distance", "steps", "total_reward")))
        self.completed = []
        return merged


StepHook = Callable[[int, SimState], SimState]


def run_episodes(policy, reward: KeypointReward, task: TaskDefinition, state: SimState, horizon: int,
                 keypoints_per_policy: int = 4, obs_rng: Optional[np.random.Generator] = None,
                 hook: Optional[StepHook] = None,
                 recorder: Optional[Callable[[int, SimState, RewardBreakdown], None]] = None) -> EpisodeOutcome:
    """
    Run the mean policy from a batched state until the bonus fires or the horizon ends

    Args:
        policy: Policy with an act(obs, deterministic=True) method
        reward: Reward evaluator bound to the batch's parameters
        task: Task definition (directive decides the initial grasp and final release)
        state: Start state; its per-episode counters are cleared, poses and grasp are kept
        horizon: Maximum control steps
        keypoints_per_policy: Observation keypoint slots
        obs_rng: Pose-noise generator (deployment proxy)
        hook: Called before each step to inject disturbances
        recorder: Called after each step with (step, state, breakdown)

    Returns:
        Outcome with the settled final state
    """
    simulator, params = reward.simulator, reward.params
    n = state.num_envs
    state = state.fresh_episode()
    if task.directive == "grasp" and np.any(state.grasped < 0):
        state = simulator.try_grasp(state, task.interaction_object, params)
    hold = np.zeros(n, dtype=np.int64)
    latched = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    steps = np.zeros(n, dtype=np.int64)
    total = np.zeros(n)

    for t in range(horizon):
        if hook is not None:
            state = hook(t, state)
        obs = build_observation(state, reward, keypoints_per_policy, obs_rng)
        action, _, _, _ = policy.act(obs, deterministic=True)
        new = simulator.step(state, ActionDelta.from_vector(action), params).where(active, state)
        breakdown, new_hold = reward(state, new, hold, latched)
        hold = np.where(active, new_hold, hold)
        total += np.where(active, breakdown.total, 0.0)
        latched = np.where(active, breakdown.success_latched, latched)
        steps += active
        state = new
        if recorder is not None:
            recorder(t, state, breakdown)
        active &= ~latched
        if not np.any(active):
            break

    if task.directive == "grasp":
        state = simulator.release(state, params)
    distance = reward.distance(state)
    return EpisodeOutcome(distance <= task.spec.success_threshold, distance, steps, total, state)


def evaluate_policy(policy, task: TaskDefinition, simulator: TabletopSimulator, dr: DomainRandomizationConfig,
                    seed: int, num_trials: int, world: str = "train", horizon: int = 150,
                    keypoints_per_policy: int = 4, judge: Optional[RewardSpec] = None) -> EpisodeOutcome:
    """
    Deterministic evaluation over freshly reset environments

    Args:
        world: "train" samples the training distribution; "proxy" samples the shifted
            deployment distribution with noisy object-pose observations
        judge: Targets success is measured against; None uses the task's own targets
    """
    if world == "proxy":
        state, params = simulator.reset(proxy_randomization(dr), seed, num_trials,
                                        shift=simulator.config.proxy_shift_fraction)
        obs_rng = np.random.default_rng([seed, OBSERVATION_NOISE_STREAM])
    elif world == "train":
        state, params = simulator.reset(dr, seed, num_trials)
        obs_rng = None
    else:
        raise ValueError(f"unknown evaluation world {world}")
    reward = KeypointReward(task.scene, task.spec, simulator, params)
    outcome = run_episodes(policy, reward, task, state, horizon, keypoints_per_policy, obs_rng)
    if judge is None:
        return outcome
    distance = KeypointReward(task.scene, judge, simulator, params).distance(outcome.final_state)
    return EpisodeOutcome(distance <= judge.success_threshold, distance, outcome.steps, outcome.total_reward,
                          outcome.final_state)
