#!/usr/bin/env python3
"""
Simulator tests
Workspace clipping, grasp rigidity, pushing, settling, release and seeded resets
"""

import json
import unittest
import numpy as np
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from numpy.testing import assert_allclose, assert_array_equal

from iker_desk.config import FIXTURES_DIR, DomainRandomizationConfig, SimulatorConfig
from iker_desk.sim.geometry import ActionDelta, Pose, compose, invert, yaw_of
from iker_desk.sim.scene import load_scene
from iker_desk.sim.simulator import (NotManipulableError, TabletopSimulator, UnplaceableSceneError,
                                     effective_ranges, env_generators, observe, sample_deployment_params,
                                     sample_params, slip_factor)


def suite_scene(task):
    return json.loads((FIXTURES_DIR / "suites" / f"{task}.json").read_text())["scene"]


def step_n(sim, state, params, dp, n, dr=(0.0, 0.0, 0.0)):
    action = ActionDelta(np.array(dp, dtype=float), np.array(dr, dtype=float))
    for _ in range(n):
        state = sim.step(state, action, params)
    return state


class TestReset(unittest.TestCase):
    """Seeded placement of objects and gripper"""

    def setUp(self):
        self.sim = TabletopSimulator(load_scene(suite_scene("place")))
        self.dr = DomainRandomizationConfig()

    def test_same_seed_same_state(self):
        a, pa = self.sim.reset(self.dr, 11, 4)
        b, pb = self.sim.reset(self.dr, 11, 4)
        assert_array_equal(a.object_position, b.object_position)
        assert_array_equal(pa.friction, pb.friction)

    def test_environment_independent_of_batch_size(self):
        small, _ = self.sim.reset(self.dr, 3, 4)
        large, _ = self.sim.reset(self.dr, 3, 8)
        assert_array_equal(small.object_position[2], large.object_position[2])
        assert_array_equal(small.gripper_position[2], large.gripper_position[2])

    def test_disabled_randomization_uses_nominal_poses(self):
        state, params = self.sim.reset(DomainRandomizationConfig(enabled=False), 0, 2)
        assert_allclose(state.object_position[:, 0], [[-0.20, 0.0, 0.03]] * 2)
        assert_allclose(state.gripper_position, [[0.0, -0.30, 0.15]] * 2)
        assert_allclose(params.scale, np.ones((2, 1)))

    def test_overlapping_objects_unplaceable(self):
        scene = suite_scene("push_pair")
        scene["objects"][1]["pose"]["position"] = [-0.18, -0.15, 0.03]
        sim = TabletopSimulator(load_scene(scene))
        with self.assertRaises(UnplaceableSceneError):
            sim.reset(DomainRandomizationConfig(enabled=False), 0, 1)

    def test_touching_objects_allowed_when_overlap_check_disabled(self):
        scene = suite_scene("push_pair")
        scene["objects"][1]["pose"]["position"] = [-0.18, -0.15, 0.03]
        sim = TabletopSimulator(load_scene(scene), SimulatorConfig(reject_initial_overlap=False))
        state, _ = sim.reset(DomainRandomizationConfig(enabled=False), 0, 1)
        self.assertEqual(state.num_envs, 1)

    def test_clearance_widens_overlap_check(self):
        scene = load_scene(suite_scene("push_pair"))
        nominal = DomainRandomizationConfig(enabled=False)
        state, _ = TabletopSimulator(scene, SimulatorConfig(min_object_clearance=0.05)).reset(nominal, 0, 1)
        self.assertEqual(state.num_envs, 1)
        with self.assertRaises(UnplaceableSceneError):
            TabletopSimulator(scene, SimulatorConfig(min_object_clearance=0.2)).reset(nominal, 0, 1)

    def test_mass_draws_cover_range(self):
        params = sample_params(self.dr, 1, env_generators(0, 10000))
        mass = params.mass[:, 0]
        self.assertGreaterEqual(mass.min(), 0.3)
        self.assertLessEqual(mass.max(), 2.0)
        self.assertGreaterEqual((mass.max() - mass.min()) / (2.0 - 0.3), 0.95)
        counts, _ = np.histogram(mass, bins=17, range=(0.3, 2.0))
        self.assertTrue(np.all(counts > 0))


class TestStepping(unittest.TestCase):
    """Gripper motion, pushing and workspace limits"""

    def setUp(self):
        self.sim = TabletopSimulator(load_scene(suite_scene("place")))
        self.state, self.params = self.sim.reset(DomainRandomizationConfig(enabled=False), 0, 1)

    def test_action_past_workspace_bound_stops_at_bound(self):
        state = step_n(self.sim, self.state, self.params, (1.0, 0.0, 0.0), 40)
        self.assertEqual(state.gripper_position[0, 0], 0.5)

    def test_step_clips_action_norm(self):
        state = step_n(self.sim, self.state, self.params, (0.3, 0.4, 0.0), 1)
        moved = state.gripper_position[0] - self.state.gripper_position[0]
        assert_allclose(moved, [0.012, 0.016, 0.0], atol=1e-12)

    def test_step_does_not_modify_input_state(self):
        before = self.state.gripper_position.copy()
        step_n(self.sim, self.state, self.params, (0.02, 0.0, 0.0), 1)
        assert_array_equal(self.state.gripper_position, before)

    def test_push_moves_object_along_contact_normal(self):
        state = self.state.copy()
        state.gripper_position[0] = [-0.32, 0.0, 0.03]
        state = step_n(self.sim, state, self.params, (0.02, 0.0, 0.0), 5)
        shoe = state.object_position[0, 0]
        self.assertGreater(shoe[0], -0.20 + 0.02)
        self.assertAlmostEqual(shoe[1], 0.0, places=9)
        self.assertAlmostEqual(shoe[2], 0.03, places=9)
        self.assertAlmostEqual(float(yaw_of(state.object_orientation[0, 0])), 0.0, places=9)
        self.assertGreater(state.contact_impulse_sum[0], 0.0)

    def test_gripper_above_object_does_not_push(self):
        state = self.state.copy()
        state.gripper_position[0] = [-0.32, 0.0, 0.15]
        state = step_n(self.sim, state, self.params, (0.02, 0.0, 0.0), 10)
        assert_allclose(state.object_position[0, 0], [-0.20, 0.0, 0.03])

    def test_slip_factor_bounds(self):
        assert_allclose(slip_factor(np.array([0.0, 0.9, 5.0])), [0.3, 0.5, 1.0])

    def test_zero_action_without_contact_only_counts_step(self):
        state = step_n(self.sim, self.state, self.params, (0.0, 0.0, 0.0), 1)
        assert_array_equal(state.step_count, self.state.step_count + 1)
        assert_array_equal(state.gripper_position, self.state.gripper_position)
        assert_array_equal(state.object_position, self.state.object_position)
        assert_array_equal(state.object_orientation, self.state.object_orientation)
        assert_array_equal(state.contact_impulse_sum, self.state.contact_impulse_sum)

    def test_pushed_object_moves_no_further_than_gripper(self):
        state, params = self.sim.reset(DomainRandomizationConfig(enabled=False), 0, 16)
        params.friction[:] = np.linspace(0.3, 1.8, 16)[:, None]
        state.gripper_position[:] = [-0.315, 0.0, 0.03]
        start = state.copy()
        state = step_n(self.sim, state, params, (0.02, 0.0, 0.0), 5)
        gripper_moved = np.linalg.norm(state.gripper_position - start.gripper_position, axis=1)
        object_moved = np.linalg.norm(state.object_position[:, 0] - start.object_position[:, 0], axis=1)
        self.assertTrue(np.all(object_moved > 0.0))
        self.assertTrue(np.all(object_moved <= gripper_moved + 1e-9))

    def test_random_pushing_leaves_no_penetration(self):
        rng = np.random.default_rng(21)
        state, params = self.sim.reset(DomainRandomizationConfig(), 4, 16)
        state.gripper_position[:, :2] = state.object_position[:, 0, :2] + rng.uniform(-0.13, 0.13, size=(16, 2))
        state.gripper_position[:, 2] = 0.03
        tolerance = self.sim.config.penetration_tolerance
        for _ in range(150):
            action = ActionDelta(rng.uniform(-0.02, 0.02, size=(16, 3)) * [1.0, 1.0, 0.2],
                                 rng.uniform(-0.1, 0.1, size=(16, 3)))
            state = self.sim.step(state, action, params)
            self.assertLessEqual(float(self.sim.penetration_depths(state, params).max()), tolerance + 1e-12)

    def test_object_gives_way_when_gripper_pinned_at_bound(self):
        state = self.state.copy()
        state.object_position[0, 0] = [0.39, 0.0, 0.03]
        state.gripper_position[0] = [0.5, 0.0, 0.03]
        self.assertGreater(float(self.sim.penetration_depths(state, self.params)[0, 0]), 0.004)
        state = step_n(self.sim, state, self.params, (0.0, 0.0, 0.0), 1)
        self.assertEqual(state.gripper_position[0, 0], 0.5)
        self.assertLessEqual(float(self.sim.penetration_depths(state, self.params)[0, 0]),
                             self.sim.config.penetration_tolerance)
        self.assertAlmostEqual(state.object_position[0, 0, 0], 0.5 - 0.015 - 0.10, places=9)
        self.assertFalse(state.out_of_workspace[0])


class TestGrasping(unittest.TestCase):
    """Grasp attachment, carrying and release"""

    def setUp(self):
        self.sim = TabletopSimulator(load_scene(suite_scene("place")))
        self.state, self.params = self.sim.reset(DomainRandomizationConfig(enabled=False), 0, 1)

    def test_grasp_static_object_rejected(self):
        with self.assertRaises(NotManipulableError):
            self.sim.try_grasp(self.state, "rack", self.params)

    def test_held_object_rigid_in_gripper_frame(self):
        state = self.sim.try_grasp(self.state, "shoe", self.params)
        self.assertEqual(state.grasped_object(), "shoe")
        grasp = Pose(state.grasp_position[0], state.grasp_orientation[0])
        state = step_n(self.sim, state, self.params, (0.01, 0.02, 0.02), 6, dr=(0.0, 0.0, 0.05))
        expected = compose(state.gripper_pose[0], grasp)
        assert_allclose(state.object_position[0, 0], expected.position, atol=1e-9)
        relative = compose(invert(state.gripper_pose[0]), state.object_pose("shoe")[0])
        assert_allclose(relative.position, grasp.position, atol=1e-9)

    def test_lifted_object_rises_with_gripper(self):
        state = self.sim.try_grasp(self.state, "shoe", self.params)
        state = step_n(self.sim, state, self.params, (0.0, 0.0, 0.02), 5)
        self.assertAlmostEqual(state.object_position[0, 0, 2], 0.13, places=9)

    def test_expected_release_settles_without_drop(self):
        state = self.sim.try_grasp(self.state, "shoe", self.params)
        state = step_n(self.sim, state, self.params, (0.0, 0.0, 0.02), 5)
        released = self.sim.release(state, self.params)
        self.assertIsNone(released.grasped_object())
        self.assertAlmostEqual(released.object_position[0, 0, 2], 0.03, places=9)
        self.assertFalse(released.dropped[0])

    def test_unexpected_release_of_lifted_object_is_drop(self):
        state = self.sim.try_grasp(self.state, "shoe", self.params)
        state = step_n(self.sim, state, self.params, (0.0, 0.0, 0.02), 5)
        released = self.sim.release(state, self.params, unexpected=True)
        self.assertTrue(released.dropped[0])

    def test_object_settles_on_rack(self):
        target = Pose.from_xyz_yaw([0.25, 0.20, 0.40], 0.3)
        state = self.sim.teleport_object(self.state, "shoe", target, self.params)
        assert_allclose(state.object_position[0, 0], [0.25, 0.20, 0.13], atol=1e-12)
        self.assertAlmostEqual(float(yaw_of(state.object_orientation[0, 0])), 0.3, places=9)

    def test_noisy_grasps_always_attach(self):
        state, params = self.sim.reset(DomainRandomizationConfig(), 0, 1000)
        self.assertLessEqual(float(np.abs(params.grasp_position_noise).max()), 0.01)
        state = self.sim.try_grasp(state, "shoe", params)
        assert_array_equal(state.grasped, np.zeros(1000, dtype=np.int64))


class TestDeploymentProxy(unittest.TestCase):
    """Shifted parameter distribution and pose observation"""

    def test_proxy_ranges_shifted(self):
        dr = DomainRandomizationConfig()
        shifted = effective_ranges(dr, 0.25)
        assert_allclose(shifted["friction"], (0.3 + 0.375, 1.8 + 0.375))
        self.assertEqual(shifted["restitution"], (0.25, 1.0))

    def test_proxy_sampling_randomizes_even_without_training_dr(self):
        scene = load_scene(suite_scene("place"))
        params = sample_deployment_params(scene, DomainRandomizationConfig(enabled=False), 5, 16)
        self.assertGreater(np.ptp(params.friction), 0.0)
        self.assertTrue(np.all(params.friction >= 0.67))

    def test_observe_without_noise_is_exact(self):
        sim = TabletopSimulator(load_scene(suite_scene("place")))
        state, _ = sim.reset(DomainRandomizationConfig(), 2, 1)
        poses = observe(sim, state)
        assert_allclose(poses["shoe"].position, state.object_position[0, 0])

    def test_observe_with_noise_is_close(self):
        sim = TabletopSimulator(load_scene(suite_scene("place")))
        state, _ = sim.reset(DomainRandomizationConfig(), 2, 1)
        poses = observe(sim, state, np.random.default_rng(0))
        self.assertLess(np.linalg.norm(poses["shoe"].position - state.object_position[0, 0]), 0.02)


if __name__ == '__main__':
    unittest.main()
