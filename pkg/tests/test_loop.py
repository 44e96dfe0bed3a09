#!/usr/bin/env python3
"""
Loop tests
Planner termination, deployment with disturbances, pose tracking, run directories and trajectory replay
"""

import json
import tempfile
import unittest
import numpy as np
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

import pytest
from numpy.testing import assert_allclose

from iker_desk.config import FIXTURES_DIR, DomainRandomizationConfig, IkerSettings, LoopConfig, PPOConfig
from iker_desk.controllers.loop_controller import DeploymentWorld, LoopController, deploy_policy, run_loop
from iker_desk.controllers.run_directory import RunDirectory, replay
from iker_desk.models.run_models import Disturbance
from iker_desk.planner.backends import ReplayPlanner, ScriptedPlanner
from iker_desk.reward.keypoint_reward import RewardSpec
from iker_desk.rl.env import TaskDefinition, evaluate_policy, observation_dim
from iker_desk.rl.network import ActorCritic
from iker_desk.rl.optimizer import RunningNormalizer
from iker_desk.rl.policy import Policy
from iker_desk.sim.geometry import Pose, quat_from_rpy, yaw_of
from iker_desk.sim.scene import load_scene, prepare_keypoints
from iker_desk.sim.simulator import TabletopSimulator

PLACE_PROGRAM = "grasp(shoe)\ntarget[1] = kp(10) + vec(0.1, 0, 0.03)\ntarget[2] = kp(10) + vec(-0.1, 0, 0.03)\n"


def place_scene():
    return load_scene(json.loads((FIXTURES_DIR / "suites" / "place.json").read_text())["scene"])


def still_policy():
    network = ActorCritic(observation_dim(4), 6, (8,), head_scale=0.0)
    return Policy(network, RunningNormalizer(observation_dim(4)))


def lift_policy():
    """Mean action raises the gripper at almost the full translation step"""
    policy = still_policy()
    policy.network.params["actor_b"][2] = 3.0
    return policy


def nominal_settings(**loop):
    return IkerSettings(dr=DomainRandomizationConfig(enabled=False),
                        loop=LoopConfig(deployment_mode="train_distribution", **loop))


class TestLoopTermination(unittest.TestCase):
    """Iterations that end before any training"""

    def test_done_on_first_query(self):
        records = run_loop(place_scene(), "Put the shoe on the rack.", IkerSettings(), ScriptedPlanner([]))
        self.assertEqual(len(records), 1)
        self.assertTrue(records[0].done)
        self.assertIsNone(records[0].outcome)
        self.assertEqual(records[0].program_text, "done = true\n")

    def test_planner_failure_recorded(self):
        bad = "grasp(sock)\ntarget[1] = kp(1)\n"
        records = run_loop(place_scene(), "Put the shoe on the rack.", IkerSettings(),
                           ReplayPlanner([bad, bad, bad], max_attempts=3))
        self.assertEqual(len(records), 1)
        self.assertFalse(records[0].done)
        self.assertIn("exhausted", records[0].error)

    def test_instruction_swapped_before_planning(self):
        swap = Disturbance(iteration=1, effect="swap_instruction", instruction="Leave the shoe where it is.")
        settings = IkerSettings(loop=LoopConfig(disturbances=[swap]))
        planner = ScriptedPlanner([])
        records = run_loop(place_scene(), "Put the shoe on the rack.", settings, planner)
        self.assertEqual(records[0].instruction, "Leave the shoe where it is.")
        self.assertIn("Task: Leave the shoe where it is.", planner.last_prompt)

    def test_run_directory_for_done_iteration(self):
        with tempfile.TemporaryDirectory() as tmp:
            run_loop(place_scene(), "Put the shoe on the rack.", IkerSettings(), ScriptedPlanner([]), run_dir=tmp)
            iteration = Path(tmp) / "iteration_01"
            self.assertTrue((iteration / "prompt.txt").exists())
            self.assertEqual((iteration / "program.txt").read_text(), "done = true\n")
            records = json.loads((Path(tmp) / "iterations.json").read_text())
            self.assertEqual(len(records), 1)
            self.assertTrue(records[0]["done"])


class TestPoseTracking(unittest.TestCase):

    def test_tracked_poses_flattened_onto_support(self):
        controller = LoopController(place_scene(), "Put the shoe on the rack.", IkerSettings(), ScriptedPlanner([]))
        observed = {"shoe": Pose(np.array([0.25, 0.20, 0.20]), quat_from_rpy(0.02, -0.01, 0.4))}
        tracked = controller.tracked_poses(observed)
        assert_allclose(tracked["shoe"].position, [0.25, 0.20, 0.13], atol=1e-12)
        self.assertAlmostEqual(float(yaw_of(tracked["shoe"].orientation)), 0.4, delta=0.05)


class TestDeployment(unittest.TestCase):
    """Policy execution in a persistent world"""

    def setUp(self):
        self.scene = place_scene()
        self.labeled = prepare_keypoints(self.scene)
        self.world = DeploymentWorld.create(self.scene, nominal_settings(), seed=0)

    def test_teleport_then_hold_succeeds(self):
        moved = Pose.from_xyz_yaw([0.0, -0.2, 0.03])
        positions = self.labeled.keypoint_positions({"shoe": moved})
        spec = RewardSpec({1: positions[1], 2: positions[2]}, "shoe")
        task = TaskDefinition(self.labeled, spec, "push", "hold")
        teleport = Disturbance(iteration=1, trigger_step=0, effect="teleport_object", object_id="shoe",
                               position=(0.0, -0.2, 0.4))
        with tempfile.TemporaryDirectory() as tmp:
            run_dir = RunDirectory(tmp)
            run_dir.write_targets(1, spec)
            trajectory = run_dir.trajectory(1)
            outcome, episode = deploy_policy(still_policy(), self.world, task, [teleport], 50, 4, trajectory)
            trajectory.close()
            replayed = replay(run_dir.iteration_dir(1))
        self.assertTrue(outcome.success)
        self.assertEqual(outcome.steps, 10)
        self.assertEqual(outcome.disturbances_applied, ["teleport_object@0"])
        assert_allclose(self.world.state.object_position[0, 0], [0.0, -0.2, 0.03], atol=1e-12)
        self.assertTrue(replayed["success"])
        self.assertEqual(replayed["logged_steps"], 10)
        self.assertEqual(replayed["steps"], 10)
        self.assertAlmostEqual(replayed["final_mean_distance"], outcome.final_mean_distance, places=9)
        self.assertAlmostEqual(replayed["total_reward"], float(episode.total_reward[0]), places=6)

    def test_forced_release_drops_grasp(self):
        positions = self.labeled.keypoint_positions()
        spec = RewardSpec({1: positions[1] + [0.0, 0.0, 0.1]}, "shoe")
        task = TaskDefinition(self.labeled, spec, "grasp", "lift")
        release = Disturbance(iteration=1, trigger_step=3, effect="force_release_grasp")
        outcome, _ = deploy_policy(still_policy(), self.world, task, [release], 8)
        self.assertEqual(outcome.disturbances_applied, ["force_release_grasp@3"])
        self.assertEqual(int(self.world.state.grasped[0]), -1)
        self.assertFalse(outcome.success)
        self.assertEqual(outcome.steps, 8)

    def test_train_distribution_matches_evaluation(self):
        settings = IkerSettings(loop=LoopConfig(deployment_mode="train_distribution"))
        world = DeploymentWorld.create(self.scene, settings, seed=11)
        positions = self.labeled.keypoint_positions()
        task = TaskDefinition(self.labeled, RewardSpec({1: positions[1] + [0.05, 0.0, 0.0]}, "shoe"), "push",
                              "nudge")
        outcome, _ = deploy_policy(still_policy(), world, task, horizon=15)
        evaluated = evaluate_policy(still_policy(), task, TabletopSimulator(self.scene, settings.simulator),
                                    settings.dr, seed=11, num_trials=1, world="train", horizon=15)
        self.assertEqual(outcome.success, bool(evaluated.success[0]))
        self.assertEqual(outcome.steps, int(evaluated.steps[0]))
        self.assertAlmostEqual(outcome.final_mean_distance, float(evaluated.final_distance[0]), places=12)

    def test_second_deployment_starts_with_clean_counters(self):
        positions = self.labeled.keypoint_positions()
        lift = TaskDefinition(self.labeled, RewardSpec({1: positions[1] + [0.0, 0.0, 0.1]}, "shoe"), "grasp",
                              "lift")
        release = Disturbance(iteration=1, trigger_step=6, effect="force_release_grasp")
        deploy_policy(lift_policy(), self.world, lift, [release], 8)
        self.assertTrue(bool(self.world.state.dropped[0]))

        settled = self.world.observe()
        nudge = TaskDefinition(self.labeled, RewardSpec({1: settled["shoe"].position + [0.05, 0.0, 0.0]}, "shoe"),
                               "push", "nudge")
        with tempfile.TemporaryDirectory() as tmp:
            run_dir = RunDirectory(tmp)
            trajectory = run_dir.trajectory(2)
            deploy_policy(still_policy(), self.world, nudge, horizon=5, trajectory=trajectory)
            trajectory.close()
            log = (run_dir.iteration_dir(2) / "trajectory.jsonl").read_text(encoding="utf-8")
        lines = [json.loads(line) for line in log.splitlines()]
        steps = [line for line in lines if line["kind"] == "step"]
        self.assertEqual([line["state"]["step"] for line in steps], [1, 2, 3, 4, 5])
        self.assertEqual([line["reward"]["r_penalty"] for line in steps], [0.0] * 5)
        self.assertTrue(all(not line["state"]["dropped"] for line in lines))
        self.assertEqual(lines[-1]["state"]["contact_impulse_sum"], 0.0)

    def test_world_state_carries_over(self):
        moved = Pose.from_xyz_yaw([0.1, -0.25, 0.03], 0.5)
        teleport = Disturbance(trigger_step=0, effect="teleport_object", object_id="shoe",
                               position=(0.1, -0.25, 0.03), yaw=0.5)
        positions = self.labeled.keypoint_positions({"shoe": moved})
        task = TaskDefinition(self.labeled, RewardSpec({1: positions[1]}, "shoe"), "push", "carry")
        deploy_policy(still_policy(), self.world, task, [teleport], 12)
        observed = self.world.observe()
        self.assertAlmostEqual(float(yaw_of(observed["shoe"].orientation)), 0.5, places=9)


@pytest.mark.integration
class TestLoopRun(unittest.TestCase):
    """Plan, train and deploy one step, then stop on done"""

    def test_scripted_loop_writes_run_directory(self):
        settings = IkerSettings(
            ppo=PPOConfig(num_envs=4, rollout_length=8, epochs_per_update=1, minibatch_size=16, max_updates=2,
                          eval_interval=1, episode_horizon=10, hidden_sizes=(16, 16)),
            loop=LoopConfig(max_iterations=3, episode_horizon=20),
        )
        with tempfile.TemporaryDirectory() as tmp:
            controller = LoopController(place_scene(), "Put the shoe on the rack.", settings,
                                        ScriptedPlanner([PLACE_PROGRAM]), seed=3, run_dir=tmp)
            records = controller.run()
            self.assertEqual(len(records), 2)
            self.assertIsNotNone(records[0].outcome)
            self.assertTrue(records[1].done)
            self.assertEqual(len(controller.history), 1)
            iteration = Path(tmp) / "iteration_01"
            for name in ("prompt.txt", "planner_output.txt", "program.txt", "policy.json", "metrics.json",
                         "targets.json", "trajectory.jsonl", "scene.json"):
                self.assertTrue((iteration / name).exists(), name)
            replayed = replay(iteration / "trajectory.jsonl")
            self.assertEqual(replayed["steps"], records[0].outcome.steps)
            self.assertEqual(replayed["logged_steps"], records[0].outcome.steps)
            self.assertAlmostEqual(replayed["final_mean_distance"], records[0].outcome.final_mean_distance, places=9)
            self.assertEqual(replayed["success"], records[0].outcome.success)
            self.assertIn("### Step 1", (Path(tmp) / "iteration_02" / "prompt.txt").read_text())


if __name__ == '__main__':
    unittest.main()
