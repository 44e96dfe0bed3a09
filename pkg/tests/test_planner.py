#!/usr/bin/env python3
"""
Planner tests
Prompt rendering, backend retry behaviour, transcript replay and the chat-completion client
"""

import os
import unittest
import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

import pytest
import requests
from fastapi.testclient import TestClient

from iker_desk.config import FIXTURES_DIR, IkerSettings, PlannerConfig
from iker_desk.harness.suite import load_cases
from iker_desk.planner.backends import (DONE_PROGRAM, LiveLLMPlanner, PlannerError, ReplayPlanner, ScriptedPlanner,
                                        create_planner, resolve_pointer)
from iker_desk.planner.program import KeypointProgram, PoseProgram
from iker_desk.planner.prompts import ExecutionHistory, HistoryEntry, build_prompt, summarize_observation
from iker_desk.services.transcript_server import TranscriptService, create_app

TRANSCRIPTS = FIXTURES_DIR / "transcripts"


class RecordingClient:
    """Forwards posts to an in-process app and keeps the request bodies"""

    def __init__(self, client):
        self.client = client
        self.bodies = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.bodies.append(json)
        return self.client.post(url, json=json, headers=headers)


def reorient_case(config_id, settings=None):
    return load_cases("reorient", settings or IkerSettings(), [config_id])[0]


def observation(case):
    return summarize_observation(case.scene, case.scene.initial_poses(), case.instruction)


class TestPrompts(unittest.TestCase):
    """Deterministic prompt text"""

    def setUp(self):
        self.case = reorient_case(1)
        self.obs = observation(self.case)

    def test_prompt_is_deterministic(self):
        history = ExecutionHistory()
        self.assertEqual(build_prompt(self.obs, history), build_prompt(self.obs, history))

    def test_observation_lists_every_keypoint(self):
        text = self.obs.render()
        for label in self.case.scene.labels:
            self.assertIn(f"{label}: (", text)
        self.assertIn("[green]", text)
        self.assertIn("Task: Rotate the book", text)

    def test_color_tags_hidden_on_request(self):
        self.assertNotIn("[green]", self.obs.render(reveal_color_tags=False))

    def test_history_rendered_oldest_first(self):
        history = ExecutionHistory()
        history.append(HistoryEntry("first observation", "push(book)\n", False, 0.12))
        history.append(HistoryEntry("second observation", "grasp(book)\n", True, 0.01))
        prompt = build_prompt(self.obs, history)
        self.assertLess(prompt.index("### Step 1"), prompt.index("### Step 2"))
        self.assertIn("Outcome: failed, final mean keypoint distance 0.120 m", prompt)
        self.assertIn("Outcome: succeeded", prompt)

    def test_pose_prompt_shows_object_poses(self):
        prompt = build_prompt(self.obs, ExecutionHistory(), "pose_baseline")
        self.assertIn("Object poses (x, y, z, roll, pitch, yaw):", prompt)
        self.assertIn("book: (0.00, 0.15, 0.07, ", prompt)
        self.assertNotIn("Keypoints (label", prompt)

    def test_unknown_prompt_mode(self):
        with self.assertRaises(ValueError):
            build_prompt(self.obs, ExecutionHistory(), "chain_of_thought")

    def test_single_step_role_omits_done(self):
        prompt = build_prompt(self.obs, ExecutionHistory(), "single_step")
        self.assertNotIn("answer with `done = true` alone", prompt)
        self.assertIn("answer with `done = true` alone", build_prompt(self.obs, ExecutionHistory()))


class TestScriptedAndReplay(unittest.TestCase):
    """Offline backends"""

    def setUp(self):
        self.case = reorient_case(3)
        self.obs = observation(self.case)

    def test_scripted_planner_follows_history_then_done(self):
        planner = ScriptedPlanner([self.case.configuration.program])
        history = ExecutionHistory()
        first = planner.query(self.obs, history, self.case.scene)
        self.assertIsInstance(first, KeypointProgram)
        self.assertEqual(first.directive.object_id, "book")
        history.append(HistoryEntry("obs", first.raw_text, True, 0.0))
        self.assertTrue(planner.query(self.obs, history, self.case.scene).done)

    def test_replay_retries_after_invalid_label(self):
        planner = ReplayPlanner.from_transcript(TRANSCRIPTS / "reorient_keypoint.json", config_id=3)
        program = planner.query(self.obs, ExecutionHistory(), self.case.scene)
        self.assertEqual(len(planner.last_responses), 2)
        self.assertIn("kp(25)", planner.last_responses[0])
        self.assertEqual(program.target_labels, [1, 2])

    def test_replay_gives_up_after_max_attempts(self):
        bad = "push(book)\ntarget[1] = kp(99)\n"
        planner = ReplayPlanner([bad, bad, bad, "push(book)\ntarget[1] = kp(1)\n"], max_attempts=3)
        with self.assertRaises(PlannerError):
            planner.query(self.obs, ExecutionHistory(), self.case.scene)
        self.assertEqual(planner.cursor, 3)

    def test_exhausted_replay_answers_done(self):
        planner = ReplayPlanner([])
        self.assertTrue(planner.query(self.obs, ExecutionHistory(), self.case.scene).done)

    def test_pose_transcript_mode_taken_from_file(self):
        planner = ReplayPlanner.from_transcript(TRANSCRIPTS / "reorient_pose.json", config_id=5)
        self.assertEqual(planner.mode, "pose")
        program = planner.query(self.obs, ExecutionHistory(), self.case.scene)
        self.assertIsInstance(program, PoseProgram)
        self.assertIn("pose[<object>] = (x, y, z, roll, pitch, yaw)", planner.last_prompt)

    def test_create_planner_selects_backend(self):
        settings = IkerSettings(planner=PlannerConfig(backend="replay",
                                                      replay_path=str(TRANSCRIPTS / "reorient_keypoint.json")))
        self.assertIsInstance(create_planner(settings, config_id=3), ReplayPlanner)
        with self.assertRaises(PlannerError):
            create_planner(IkerSettings(planner=PlannerConfig(backend="scripted")))
        with self.assertRaises(PlannerError):
            live = IkerSettings(planner=PlannerConfig(backend="live"))
            create_planner(live.model_copy(update={"planner_api_url": None}))


class TestResolvePointer(unittest.TestCase):

    def test_nested_lookup(self):
        body = {"choices": [{"message": {"content": "done = true"}}], "a/b": {"~x": 1}}
        self.assertEqual(resolve_pointer(body, "/choices/0/message/content"), "done = true")
        self.assertEqual(resolve_pointer(body, "/a~1b/~0x"), 1)
        self.assertIs(resolve_pointer(body, ""), body)

    def test_missing_value(self):
        with self.assertRaises(PlannerError):
            resolve_pointer({"choices": []}, "/choices/0/message/content")


class TestLivePlannerClient(unittest.TestCase):
    """The HTTP client against the in-process transcript service"""

    def setUp(self):
        self.case = reorient_case(3)
        self.obs = observation(self.case)
        service = TranscriptService.from_file(TRANSCRIPTS / "reorient_keypoint.json", config_id=3)
        self.service = service
        self.client = RecordingClient(TestClient(create_app(service)))

    def test_rejection_fed_back_to_model(self):
        planner = LiveLLMPlanner("/v1/chat/completions", "recorded", session=self.client)
        program = planner.query(self.obs, ExecutionHistory(), self.case.scene)
        self.assertEqual(program.directive.kind, "push")
        self.assertEqual(len(self.client.bodies), 2)
        retry = self.client.bodies[1]["messages"]
        self.assertEqual([m["role"] for m in retry], ["user", "assistant", "user"])
        self.assertIn("unknown keypoint label 25", retry[2]["content"])
        self.assertEqual(self.service.status()["requests_served"], 2)

    def test_done_after_transcript_exhausted(self):
        planner = LiveLLMPlanner("/v1/chat/completions", "recorded", session=self.client)
        planner.query(self.obs, ExecutionHistory(), self.case.scene)
        self.assertTrue(planner.query(self.obs, ExecutionHistory(), self.case.scene).done)
        self.assertEqual(planner.last_responses, [DONE_PROGRAM])

    def test_unreachable_endpoint_is_planner_error(self):
        planner = LiveLLMPlanner("http://127.0.0.1:9/v1/chat/completions", "recorded",
                                 session=requests.Session(), timeout=2.0)
        with self.assertRaises(PlannerError):
            planner.query(self.obs, ExecutionHistory(), self.case.scene)


@pytest.mark.live
@unittest.skipUnless(os.environ.get("PLANNER_API_URL"), "PLANNER_API_URL not set")
class TestLiveEndpoint(unittest.TestCase):
    """Real model endpoint; answers vary, so only the contract is checked"""

    def test_live_planner_returns_valid_program(self):
        settings = IkerSettings(planner=PlannerConfig(backend="live"))
        case = reorient_case(1, settings)
        planner = create_planner(settings)
        try:
            program = planner.query(observation(case), ExecutionHistory(), case.scene)
        except PlannerError as e:
            self.skipTest(f"endpoint did not produce a valid program: {e}")
        self.assertTrue(program.done or program.directive is not None)


if __name__ == '__main__':
    unittest.main()
