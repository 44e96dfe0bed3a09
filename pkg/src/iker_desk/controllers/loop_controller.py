"""
Iterative loop controller
Observe, plan, train and deploy until the planner reports done, carrying the world state across steps
"""

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import IkerSettings, config_hash
from ..models.run_models import DeploymentOutcome, Disturbance, IterationRecord
from ..planner.backends import PlannerBackend, PlannerError
from ..planner.interpreter import program_targets
from ..planner.program import format_program
from ..planner.prompts import ExecutionHistory, HistoryEntry, summarize_observation
from ..reward.keypoint_reward import KeypointReward, RewardSpec
from ..rl.checkpoint import save_checkpoint
from ..rl.env import OBSERVATION_NOISE_STREAM, EpisodeOutcome, TaskDefinition, run_episodes
from ..rl.policy import Policy
from ..rl.ppo import TrainingDivergenceError
from ..rl.trainer import train_task
from ..sim.geometry import Pose, quat_from_yaw, yaw_of
from ..sim.scene import SceneModel, object_spec_of, prepare_keypoints
from ..sim.simulator import (EpisodeParams, SimState, TabletopSimulator, deployment_shift, observe,
                             proxy_randomization)
from .run_directory import RunDirectory, TrajectoryLog

logger = logging.getLogger(__name__)


@dataclass
class DeploymentWorld:
    """The world policies are executed in; its state persists across loop iterations"""
    simulator: TabletopSimulator
    state: SimState
    params: EpisodeParams
    mode: str
    obs_rng: Optional[np.random.Generator] = None

    @classmethod
    def create(cls, scene: SceneModel, settings: IkerSettings, seed: int) -> "DeploymentWorld":
        """
        Sample one world from the training distribution or the shifted deployment proxy

        Seeding matches evaluate_policy, so a world created with seed s reproduces trial 0 of an
        evaluation run with the same seed.
        """
        simulator = TabletopSimulator(scene, settings.simulator)
        mode = settings.loop.deployment_mode
        if mode == "deployment_proxy":
            state, params = simulator.reset(proxy_randomization(settings.dr), seed, 1,
                                            shift=deployment_shift(settings.simulator))
            obs_rng = np.random.default_rng([seed, OBSERVATION_NOISE_STREAM])
        elif mode == "train_distribution":
            state, params = simulator.reset(settings.dr, seed, 1)
            obs_rng = None
        else:
            raise ValueError(f"unknown deployment mode {mode}")
        logger.debug(f"Created {mode} world with seed {seed}")
        return cls(simulator, state, params, mode, obs_rng)

    def observe(self) -> Dict[str, Pose]:
        return observe(self.simulator, self.state, self.obs_rng)


def _disturbance_hook(world: DeploymentWorld, disturbances: Sequence[Disturbance],
                      applied: List[str]) -> Callable[[int, SimState], SimState]:
    def hook(t: int, state: SimState) -> SimState:
        for d in disturbances:
            if d.trigger_step != t:
                continue
            if d.effect == "teleport_object":
                pose = Pose.from_xyz_yaw(np.array(d.position), d.yaw)
                state = world.simulator.teleport_object(state, d.object_id, pose, world.params)
            elif d.effect == "force_release_grasp":
                state = world.simulator.release(state, world.params, unexpected=True)
            else:
                continue
            logger.info(f"Disturbance {d.effect} at step {t}")
            applied.append(f"{d.effect}@{t}")
        return state
    return hook


def deploy_policy(policy: Policy, world: DeploymentWorld, task: TaskDefinition,
                  disturbances: Sequence[Disturbance] = (), horizon: int = 300, keypoints_per_policy: int = 4,
                  trajectory: Optional[TrajectoryLog] = None) -> Tuple[DeploymentOutcome, EpisodeOutcome]:
    """
    Execute the mean policy in the world and advance the world state

    Args:
        policy: Trained policy
        world: Deployment world (mutated: its state becomes the episode's settled final state)
        task: Labeled scene, targets and directive the policy was trained for
        disturbances: Scheduled interventions for this deployment
        horizon: Maximum control steps
        keypoints_per_policy: Observation keypoint slots
        trajectory: Optional log receiving every step and the settled final state

    Returns:
        (deployment outcome, raw episode outcome)
    """
    reward = KeypointReward(task.scene, task.spec, world.simulator, world.params)
    applied: List[str] = []
    hook = _disturbance_hook(world, disturbances, applied) if disturbances else None
    recorder = None
    if trajectory is not None:
        def recorder(t, state, breakdown):
            trajectory.write_step(t, state, reward.keypoints(state), breakdown)

    episode = run_episodes(policy, reward, task, world.state, horizon, keypoints_per_policy,
                           world.obs_rng, hook, recorder)
    world.state = episode.final_state
    if trajectory is not None:
        trajectory.write_final(episode.final_state, reward.keypoints(episode.final_state), int(episode.steps[0]))

    outcome = DeploymentOutcome(
        success=bool(episode.success[0]),
        final_mean_distance=float(episode.final_distance[0]),
        steps=int(episode.steps[0]),
        disturbances_applied=applied,
    )
    return outcome, episode


class LoopController:
    """
    Iterative keypoint-reward loop over one scene

    Each iteration regenerates keypoints from the tracked object poses, queries the planner with
    the observation and the execution history, trains a policy for the returned program and runs
    it in the deployment world. Deployment failures are fed back to the planner; planner and
    training failures end the loop.
    """

    def __init__(self, scene: SceneModel, instruction: str, settings: IkerSettings, planner: PlannerBackend,
                 seed: int = 0, run_dir: Optional[Union[str, Path]] = None):
        self.scene = scene
        self.instruction = instruction
        self.settings = settings
        self.planner = planner
        self.seed = seed
        self.run_dir = RunDirectory(run_dir) if run_dir is not None else None
        self.history = ExecutionHistory()
        self.records: List[IterationRecord] = []
        self.world = DeploymentWorld.create(scene, settings, seed)
        # scenes carried over from a previous deployment may start with objects in contact
        self.train_sim_config = settings.simulator.model_copy(update={"reject_initial_overlap": False})

    def tracked_poses(self, observed: Dict[str, Pose]) -> Dict[str, Pose]:
        """Observed poses flattened onto their support and kept inside the workspace"""
        poses = {}
        for object_id, pose in observed.items():
            obj = self.scene.object(object_id)
            position = np.clip(pose.position, self.scene.workspace_min, self.scene.workspace_max)
            position[2] = float(self.scene.support_height(position[:2])) + obj.half_extents[2]
            poses[object_id] = Pose(position, quat_from_yaw(float(yaw_of(pose.orientation))))
        return poses

    def _finish(self, record: IterationRecord, started: float) -> None:
        record.wall_time = time.time() - started
        self.records.append(record)
        if self.run_dir is not None:
            self.run_dir.write_json(record.index, "metrics.json", record.model_dump(mode="json"))
            self.run_dir.write_records(self.records)

    def run_iteration(self, index: int) -> bool:
        """One observe-plan-train-deploy pass; returns False when the loop must stop"""
        started = time.time()
        loop_config = self.settings.loop
        for d in loop_config.disturbances:
            if d.effect == "swap_instruction" and d.iteration == index:
                logger.info(f"Instruction changed to: {d.instruction}")
                self.instruction = d.instruction

        poses = self.tracked_poses(self.world.observe())
        labeled = prepare_keypoints(self.scene.with_object_poses(poses))
        obs = summarize_observation(labeled, poses, self.instruction)
        summary = obs.render(self.planner.reveal_color_tags, include_poses=self.planner.mode == "pose")
        record = IterationRecord(index=index, instruction=self.instruction, observation_summary=summary)
        if self.run_dir is not None:
            self.run_dir.write_json(index, "scene.json",
                                    {"objects": [object_spec_of(o).model_dump() for o in labeled.objects]})

        try:
            program = self.planner.query(obs, self.history, labeled)
        except PlannerError as e:
            logger.error(f"Iteration {index}: planner failed: {e}")
            record.error = str(e)
            self._write_exchange(index)
            self._finish(record, started)
            return False
        self._write_exchange(index)
        record.program_text = format_program(program)
        record.done = program.done
        if self.run_dir is not None:
            self.run_dir.write_text(index, "program.txt", record.program_text)
        if program.done:
            logger.info(f"Iteration {index}: planner reports the task complete")
            self._finish(record, started)
            return False

        directive = program.directive
        spec = RewardSpec.from_config(program_targets(program, labeled, poses), directive.object_id,
                                      self.settings.reward, self.settings.simulator)
        logger.info(f"Iteration {index}: {directive.kind}({directive.object_id}) with targets for "
                    f"keypoints {list(spec.labels)}")
        task = TaskDefinition(labeled, spec, directive.kind, name=f"iteration_{index:02d}")
        if self.run_dir is not None:
            self.run_dir.write_targets(index, spec)

        try:
            result = train_task(task, self.settings.dr, self.settings.ppo, self.train_sim_config, self.seed + index)
        except TrainingDivergenceError as e:
            logger.error(f"Iteration {index}: training failed: {e}")
            record.error = str(e)
            self._finish(record, started)
            return False
        record.training_metrics = {
            "updates": result.updates,
            "best_success": result.best_success,
            "stopped_early": result.stopped_early,
            "wall_time": result.wall_time,
            "last": result.history[-1] if result.history else {},
        }
        if self.run_dir is not None:
            save_checkpoint(result.policy, self.run_dir.iteration_dir(index) / "policy.json",
                            config_hash(self.settings), {"iteration": index, "task": task.name})

        scheduled = [d for d in loop_config.disturbances if d.iteration == index and d.effect != "swap_instruction"]
        trajectory = self.run_dir.trajectory(index) if self.run_dir is not None else None
        try:
            outcome, _ = deploy_policy(result.policy, self.world, task, scheduled, loop_config.episode_horizon,
                                       self.settings.ppo.keypoints_per_policy, trajectory)
        finally:
            if trajectory is not None:
                trajectory.close()
        record.outcome = outcome
        logger.info(f"Iteration {index}: deployment {'succeeded' if outcome.success else 'failed'}, "
                    f"mean distance {outcome.final_mean_distance:.3f} m after {outcome.steps} steps")

        self.history.append(HistoryEntry(summary, record.program_text, outcome.success,
                                         outcome.final_mean_distance))
        self._finish(record, started)
        return True

    def _write_exchange(self, index: int) -> None:
        if self.run_dir is not None:
            self.run_dir.write_planner_exchange(index, self.planner.last_prompt, self.planner.last_responses)

    def run(self) -> List[IterationRecord]:
        logger.info(f"Starting loop: {self.instruction!r}, up to {self.settings.loop.max_iterations} iterations "
                    f"in the {self.world.mode} world")
        for index in range(1, self.settings.loop.max_iterations + 1):
            if not self.run_iteration(index):
                break
        else:
            logger.warning(f"Loop stopped after {self.settings.loop.max_iterations} iterations without done")
        return self.records


def run_loop(scene: SceneModel, instruction: str, settings: IkerSettings, planner: PlannerBackend,
             seed: int = 0, run_dir: Optional[Union[str, Path]] = None) -> List[IterationRecord]:
    """
    Run the loop to completion

    Args:
        scene: Scene without keypoints (labels are regenerated every iteration)
        instruction: Task in natural language
        settings: Loop, training and deployment settings
        planner: Backend answering each iteration
        seed: Seeds the world, observation noise and every training run
        run_dir: Optional directory receiving per-iteration artifacts

    Returns:
        One record per iteration, in order
    """
    return LoopController(scene, instruction, settings, planner, seed, run_dir).run()
