#!/usr/bin/env python3
"""
Geometry tests
Poses, quaternions and action integration checked against a homogeneous-matrix oracle
"""

import unittest
import numpy as np
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from numpy.testing import assert_allclose

from iker_desk.sim.geometry import (ActionDelta, Pose, canonical_quat, clip_action, compose, exp_map,
                                    integrate_action, invert, log_map, quat_from_rpy, quat_from_yaw,
                                    quat_multiply, rpy_of, transform_point, yaw_of)


def matrix_of(q):
    """Rotation matrix from a unit (w, x, y, z) quaternion, written out by hand"""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def homogeneous(pose):
    h = np.eye(4)
    h[:3, :3] = matrix_of(pose.orientation)
    h[:3, 3] = pose.position
    return h


def random_pose(rng):
    q = rng.normal(size=4)
    return Pose(rng.uniform(-1, 1, size=3), q / np.linalg.norm(q))


def rodrigues(rotvec):
    """Rotation matrix of an axis-angle vector, I + sin(t) K + (1 - cos(t)) K^2"""
    theta = np.linalg.norm(rotvec)
    if theta < 1e-12:
        return np.eye(3)
    kx, ky, kz = rotvec / theta
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


class TestPoseAlgebra(unittest.TestCase):
    """compose / invert / transform_point against 4x4 matrices"""

    def setUp(self):
        self.rng = np.random.default_rng(1234)

    def test_compose_matches_matrix_product(self):
        for _ in range(500):
            a, b = random_pose(self.rng), random_pose(self.rng)
            assert_allclose(homogeneous(compose(a, b)), homogeneous(a) @ homogeneous(b), atol=1e-9)

    def test_compose_is_associative(self):
        for _ in range(1000):
            a, b, c = random_pose(self.rng), random_pose(self.rng), random_pose(self.rng)
            left, right = compose(compose(a, b), c), compose(a, compose(b, c))
            assert_allclose(left.position, right.position, atol=1e-9)
            assert_allclose(matrix_of(left.orientation), matrix_of(right.orientation), atol=1e-9)

    def test_invert_matches_matrix_inverse(self):
        for _ in range(500):
            a = random_pose(self.rng)
            assert_allclose(homogeneous(invert(a)), np.linalg.inv(homogeneous(a)), atol=1e-9)

    def test_compose_with_inverse_is_identity(self):
        for _ in range(200):
            a = random_pose(self.rng)
            result = compose(a, invert(a))
            assert_allclose(result.position, np.zeros(3), atol=1e-9)
            assert_allclose(result.orientation, [1.0, 0.0, 0.0, 0.0], atol=1e-9)

    def test_transform_point_matches_matrix(self):
        for _ in range(500):
            a = random_pose(self.rng)
            p = self.rng.uniform(-0.5, 0.5, size=3)
            expected = (homogeneous(a) @ np.append(p, 1.0))[:3]
            assert_allclose(transform_point(a, p), expected, atol=1e-9)

    def test_batched_transform_matches_loop(self):
        poses = [random_pose(self.rng) for _ in range(8)]
        batch = Pose(np.stack([p.position for p in poses]), np.stack([p.orientation for p in poses]))
        local = self.rng.uniform(-0.1, 0.1, size=(8, 4, 3))
        result = transform_point(batch, local)
        self.assertEqual(result.shape, (8, 4, 3))
        for i, pose in enumerate(poses):
            for k in range(4):
                assert_allclose(result[i, k], transform_point(pose, local[i, k]), atol=1e-12)

    def test_identity_pose(self):
        identity = Pose.identity()
        p = np.array([0.1, -0.2, 0.3])
        assert_allclose(transform_point(identity, p), p)
        self.assertEqual(Pose.identity((5,)).position.shape, (5, 3))

    def test_non_finite_position_rejected(self):
        with self.assertRaises(ValueError):
            Pose(np.array([np.nan, 0.0, 0.0]), np.array([1.0, 0.0, 0.0, 0.0]))


class TestQuaternions(unittest.TestCase):
    """Canonical form, products and angle helpers"""

    def setUp(self):
        self.rng = np.random.default_rng(99)

    def test_canonical_form_has_non_negative_scalar(self):
        q = canonical_quat(self.rng.normal(size=(100, 4)))
        self.assertTrue(np.all(q[:, 0] >= 0.0))
        assert_allclose(np.linalg.norm(q, axis=1), np.ones(100), atol=1e-12)

    def test_product_matches_matrix_product(self):
        for _ in range(300):
            a = canonical_quat(self.rng.normal(size=4))
            b = canonical_quat(self.rng.normal(size=4))
            assert_allclose(matrix_of(quat_multiply(a, b)), matrix_of(a) @ matrix_of(b), atol=1e-9)

    def test_yaw_round_trip(self):
        yaws = self.rng.uniform(-np.pi + 1e-6, np.pi - 1e-6, size=200)
        assert_allclose(yaw_of(quat_from_yaw(yaws)), yaws, atol=1e-9)

    def test_rpy_round_trip(self):
        for _ in range(100):
            roll, yaw = self.rng.uniform(-3.0, 3.0, size=2)
            pitch = self.rng.uniform(-1.5, 1.5)
            assert_allclose(rpy_of(quat_from_rpy(roll, pitch, yaw)), [roll, pitch, yaw], atol=1e-9)

    def test_exp_log_inverse(self):
        rotvecs = self.rng.uniform(-1.0, 1.0, size=(50, 3))
        assert_allclose(log_map(exp_map(rotvecs)), rotvecs, atol=1e-9)

    def test_quarter_turn_about_z(self):
        q = quat_from_yaw(np.pi / 2)
        assert_allclose(matrix_of(q) @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)


class TestActions(unittest.TestCase):
    """Clipping and integration of end-effector commands"""

    def test_clip_action_bounds_norms(self):
        action = ActionDelta(np.array([0.3, 0.4, 0.0]), np.array([0.0, 0.0, 2.0]))
        clipped = clip_action(action, 0.02, 0.1)
        self.assertAlmostEqual(np.linalg.norm(clipped.dp), 0.02, places=12)
        self.assertAlmostEqual(np.linalg.norm(clipped.dr), 0.1, places=12)
        assert_allclose(clipped.dp / np.linalg.norm(clipped.dp), [0.6, 0.8, 0.0], atol=1e-12)

    def test_clip_action_keeps_small_actions(self):
        action = ActionDelta(np.array([0.001, 0.0, -0.002]), np.array([0.01, 0.0, 0.0]))
        clipped = clip_action(action)
        assert_allclose(clipped.dp, action.dp)
        assert_allclose(clipped.dr, action.dr)

    def test_integrate_then_inverse_restores_pose(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            pose = random_pose(rng)
            action = ActionDelta(rng.uniform(-0.02, 0.02, 3), rng.uniform(-0.05, 0.05, 3))
            back = integrate_action(integrate_action(pose, action), action.inverse())
            assert_allclose(back.position, pose.position, atol=1e-12)
            assert_allclose(matrix_of(back.orientation), matrix_of(pose.orientation), atol=1e-9)

    def test_integrate_rotation_is_world_frame(self):
        pose = Pose.from_xyz_yaw(np.zeros(3), 0.3)
        turned = integrate_action(pose, ActionDelta(np.zeros(3), np.array([0.0, 0.0, 0.1])))
        self.assertAlmostEqual(float(yaw_of(turned.orientation)), 0.4, places=12)

    def test_orientation_stays_unit_over_long_integration(self):
        rng = np.random.default_rng(17)
        pose = Pose.identity()
        for _ in range(10000):
            action = ActionDelta(rng.uniform(-0.02, 0.02, 3), rng.uniform(-0.1, 0.1, 3))
            pose = integrate_action(pose, clip_action(action))
            self.assertAlmostEqual(float(np.linalg.norm(pose.orientation)), 1.0, delta=1e-6)

    def test_action_sequence_matches_rotation_matrices(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            pose = random_pose(rng)
            rotation, position = matrix_of(pose.orientation), pose.position.copy()
            for _ in range(10):
                action = ActionDelta(rng.uniform(-0.02, 0.02, 3), rng.uniform(-0.1, 0.1, 3))
                pose = integrate_action(pose, action)
                rotation = rodrigues(action.dr) @ rotation
                position = position + action.dp
            assert_allclose(pose.position, position, atol=1e-12)
            assert_allclose(matrix_of(pose.orientation), rotation, atol=1e-9)


if __name__ == '__main__':
    unittest.main()
