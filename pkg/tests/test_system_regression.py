#!/usr/bin/env python3
"""
System regression tests
Configuration loading, presets and the command line entry point
"""

import contextlib
import io
import json
import os
import tempfile
import unittest
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from pydantic import ValidationError

from iker_desk.config import (BENCH_CONDITIONS, DEFAULT_CONFIG_PATH, TASK_PRESETS, IkerSettings, config_hash,
                              load_config)
from iker_desk.main import build_parser, main

PLACE_PROGRAM = "grasp(shoe)\ntarget[1] = kp(10) + vec(0.1, 0, 0.03)\ntarget[2] = kp(10) + vec(-0.1, 0, 0.03)\n"


def run_cli(argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(argv)
    return code, out.getvalue()


class TestConfiguration(unittest.TestCase):
    """Settings files, overrides and hashing"""

    def test_committed_config_matches_defaults(self):
        self.assertEqual(config_hash(load_config(DEFAULT_CONFIG_PATH)), config_hash(IkerSettings()))

    def test_hash_is_stable_and_sensitive(self):
        digest = config_hash(IkerSettings())
        self.assertEqual(len(digest), 12)
        self.assertEqual(digest, config_hash(IkerSettings()))
        self.assertNotEqual(digest, config_hash(load_config(ppo={"learning_rate": 1e-3})))

    def test_credentials_not_hashed(self):
        settings = IkerSettings()
        with_key = settings.model_copy(update={"planner_api_key": "secret"})
        self.assertEqual(config_hash(settings), config_hash(with_key))
        self.assertNotIn("planner_api_key", json.dumps(with_key.sections()))

    def test_yaml_file_and_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "small.yaml"
            path.write_text("ppo:\n  num_envs: 8\n  max_updates: 3\nloop:\n  max_iterations: 2\n")
            settings = load_config(path, ppo={"max_updates": 5})
        self.assertEqual(settings.ppo.num_envs, 8)
        self.assertEqual(settings.ppo.max_updates, 5)
        self.assertEqual(settings.loop.max_iterations, 2)

    def test_unknown_keys_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.json"
            path.write_text(json.dumps({"ppo": {"num_env": 8}}))
            with self.assertRaises(ValidationError):
                load_config(path)

    def test_invalid_values_rejected(self):
        with self.assertRaises(ValidationError):
            load_config(dr={"friction": [1.5, 0.5]})
        with self.assertRaises(ValidationError):
            load_config(ppo={"clip_epsilon": 1.5})
        with self.assertRaises(ValidationError):
            load_config(loop={"deployment_mode": "real_robot"})

    def test_move_threshold_defaults_to_translation_step(self):
        settings = load_config(reward={"move_threshold": 0.0}, simulator={"max_translation_step": 0.03})
        self.assertEqual(settings.reward.move_threshold, 0.03)

    def test_environment_overrides(self):
        saved = {k: os.environ.get(k) for k in ("IKER_PPO__NUM_ENVS", "PLANNER_API_URL")}
        try:
            os.environ["IKER_PPO__NUM_ENVS"] = "16"
            os.environ["PLANNER_API_URL"] = "http://127.0.0.1:9/v1/chat/completions"
            settings = IkerSettings()
            self.assertEqual(settings.ppo.num_envs, 16)
            self.assertEqual(settings.planner_api_url, "http://127.0.0.1:9/v1/chat/completions")
        finally:
            for key, value in saved.items():
                if value is None:
                    os.environ.pop(key, None)
                else:
                    os.environ[key] = value


class TestPresets(unittest.TestCase):

    def test_task_presets(self):
        self.assertEqual(sorted(TASK_PRESETS), ["place", "push_edge", "push_pair", "reorient"])
        for task, preset in TASK_PRESETS.items():
            with self.subTest(task=task):
                self.assertIn(preset["directive"], ("grasp", "push"))
                self.assertTrue(preset["instruction"])

    def test_conditions(self):
        self.assertEqual(BENCH_CONDITIONS["annotated"]["source"], "scripted")
        self.assertEqual(BENCH_CONDITIONS["pose_baseline"], {"source": "planner", "representation": "pose"})


class TestCommandLine(unittest.TestCase):
    """Entry point behaviour without training"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text)
        return str(path)

    def test_parser_defaults(self):
        args = build_parser().parse_args(["bench", "--task", "place", "--configs", "1,3"])
        self.assertEqual(args.configs, [1, 3])
        self.assertEqual(args.seed, 0)
        self.assertIsNone(args.condition)

    def test_validate_program_prints_targets(self):
        code, out = run_cli(["validate-program", self.write("p.txt", PLACE_PROGRAM),
                             "--task", "place", "--config-id", "1"])
        self.assertEqual(code, 0)
        self.assertIn("# grasp(shoe)", out)
        self.assertIn("# target 1: (0.3000, 0.2000, 0.1300)", out)
        self.assertIn("# target 2: (0.1000, 0.2000, 0.1300)", out)

    def test_validate_pose_program(self):
        program = self.write("pose.txt", "grasp(shoe)\npose[shoe] = (0.2, 0.2, 0.13, 0, 0, 0)\n")
        code, out = run_cli(["validate-program", program, "--pose", "--task", "place", "--config-id", "1"])
        self.assertEqual(code, 0)
        self.assertIn("# target 1: (0.3000, 0.2000, 0.1300)", out)

    def test_invalid_program_exits_nonzero(self):
        program = self.write("bad.txt", "grasp(shoe)\ntarget[1] = kp(99)\n")
        with contextlib.redirect_stderr(io.StringIO()) as err:
            with self.assertRaises(SystemExit) as ctx:
                run_cli(["validate-program", program, "--task", "place", "--config-id", "1"])
        self.assertEqual(ctx.exception.code, 1)
        self.assertIn("unknown keypoint label 99", err.getvalue())

    def test_missing_file_exits_nonzero(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                run_cli(["validate-program", str(self.dir / "absent.txt"), "--task", "place", "--config-id", "1"])
        self.assertEqual(ctx.exception.code, 1)

    def test_unknown_task_is_usage_error(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                build_parser().parse_args(["bench", "--task", "stack"])
        self.assertEqual(ctx.exception.code, 2)


if __name__ == '__main__':
    unittest.main()
