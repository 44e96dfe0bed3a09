"""
Planner backends
Scripted (annotated), replayed and live chat-model planners behind one query interface
"""

import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import requests

from ..sim.scene import SceneModel
from .program import KeypointProgram, PoseProgram, ProgramError, parse_pose_program, parse_program
from .prompts import ExecutionHistory, ObservationSummary, build_prompt, load_prompt_prefix

logger = logging.getLogger(__name__)

DONE_PROGRAM = "done = true\n"
DEFAULT_POINTER = "/choices/0/message/content"

Program = Union[KeypointProgram, PoseProgram]


class PlannerError(RuntimeError):
    """Planner failed to produce a valid program"""


def resolve_pointer(document: Any, pointer: str) -> Any:
    """Value at a JSON pointer ("/choices/0/message/content")"""
    if pointer in ("", "/"):
        return document
    current = document
    for token in pointer.lstrip("/").split("/"):
        token = token.replace("~1", "/").replace("~0", "~")
        try:
            current = current[int(token)] if isinstance(current, list) else current[token]
        except (KeyError, IndexError, ValueError, TypeError):
            raise PlannerError(f"response has no value at {pointer}") from None
    return current


def load_transcript(path: Union[str, Path]) -> Dict[str, Any]:
    """Recorded planner exchanges: {"task", "mode", "model", "exchanges": [{"config_id", "response"}]}"""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "exchanges" not in data:
        raise ValueError(f"{path} is not a planner transcript")
    return data


def transcript_responses(transcript: Dict[str, Any], config_id: Optional[int] = None) -> List[Dict[str, Any]]:
    return [ex["response"] for ex in transcript["exchanges"]
            if config_id is None or ex.get("config_id") == config_id]


class PlannerBackend(ABC):
    """
    Common query logic: prompt, complete, parse, and re-prompt with the parse error

    Args:
        mode: "keypoint" for keypoint programs, "pose" for the pose baseline
        prompt_mode: single_step or multi_step (ignored in pose mode)
        max_attempts: Completions tried before giving up
        reveal_color_tags: Show keypoint grouping by object color
        prefix: Optional in-context prompt prefix
    """

    name = "base"

    def __init__(self, mode: str = "keypoint", prompt_mode: str = "multi_step", max_attempts: int = 3,
                 reveal_color_tags: bool = True, prefix: str = ""):
        if mode not in ("keypoint", "pose"):
            raise ValueError(f"unknown planner mode {mode}")
        self.mode = mode
        self.prompt_mode = "pose_baseline" if mode == "pose" else prompt_mode
        self.max_attempts = max_attempts
        self.reveal_color_tags = reveal_color_tags
        self.prefix = prefix
        self.last_prompt: Optional[str] = None
        self.last_responses: List[str] = []

    @abstractmethod
    def complete(self, messages: List[Dict[str, str]], history: ExecutionHistory) -> str:
        """Raw planner output for the conversation so far"""

    def parse(self, text: str, scene: SceneModel) -> Program:
        if self.mode == "pose":
            return parse_pose_program(text, scene)
        return parse_program(text, scene)

    def query(self, obs: ObservationSummary, history: ExecutionHistory, scene: SceneModel) -> Program:
        prompt = build_prompt(obs, history, self.prompt_mode, self.reveal_color_tags, self.prefix)
        self.last_prompt = prompt
        self.last_responses = []
        messages = [{"role": "user", "content": prompt}]

        for attempt in range(1, self.max_attempts + 1):
            text = self.complete(messages, history)
            self.last_responses.append(text)
            try:
                program = self.parse(text, scene)
                logger.info(f"{self.name} planner answered on attempt {attempt}")
                return program
            except ProgramError as e:
                logger.warning(f"{self.name} planner output rejected (attempt {attempt}/{self.max_attempts}): {e}")
                messages = messages + [
                    {"role": "assistant", "content": text},
                    {"role": "user", "content": f"Your program was rejected: {e}. Reply with a corrected program."},
                ]
        raise PlannerError("planner exhausted retries")


class ScriptedPlanner(PlannerBackend):
    """Hand-authored programs, one per loop iteration, then done"""

    name = "scripted"

    def __init__(self, programs: Sequence[str], **kwargs):
        kwargs.setdefault("max_attempts", 1)
        super().__init__(**kwargs)
        self.programs = list(programs)

    def complete(self, messages, history):
        index = len(history)
        return self.programs[index] if index < len(self.programs) else DONE_PROGRAM


class ReplayPlanner(PlannerBackend):
    """Recorded planner outputs returned in order, then done"""

    name = "replay"

    def __init__(self, responses: Sequence[str], **kwargs):
        super().__init__(**kwargs)
        self.responses = list(responses)
        self.cursor = 0

    @classmethod
    def from_transcript(cls, path: Union[str, Path], config_id: Optional[int] = None,
                        pointer: str = DEFAULT_POINTER, **kwargs) -> "ReplayPlanner":
        transcript = load_transcript(path)
        kwargs.setdefault("mode", transcript.get("mode", "keypoint"))
        texts = [resolve_pointer(r, pointer) for r in transcript_responses(transcript, config_id)]
        return cls(texts, **kwargs)

    def complete(self, messages, history):
        if self.cursor >= len(self.responses):
            return DONE_PROGRAM
        text = self.responses[self.cursor]
        self.cursor += 1
        return text


class LiveLLMPlanner(PlannerBackend):
    """
    Chat-completion endpoint client

    POSTs {"model", "messages"} to the configured URL and reads the completion text at a JSON
    pointer of the response body.
    """

    name = "live"

    def __init__(self, url: str, model: str, api_key: Optional[str] = None,
                 session: Optional[requests.Session] = None, pointer: str = DEFAULT_POINTER,
                 timeout: float = 60.0, **kwargs):
        super().__init__(**kwargs)
        self.url = url
        self.model = model
        self.api_key = api_key
        self.session = session or requests.Session()
        self.pointer = pointer
        self.timeout = timeout

    def complete(self, messages, history):
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self.session.post(self.url, json={"model": self.model, "messages": messages},
                                         headers=headers, timeout=self.timeout)
            response.raise_for_status()
            body = response.json()
        except requests.RequestException as e:
            logger.error(f"Planner request to {self.url} failed: {e}")
            raise PlannerError(f"planner transport error: {e}") from e
        except ValueError as e:
            raise PlannerError(f"planner response is not JSON: {e}") from e
        text = resolve_pointer(body, self.pointer)
        if not isinstance(text, str):
            raise PlannerError(f"value at {self.pointer} is not text")
        return text


def query_planner(backend: PlannerBackend, obs: ObservationSummary, history: ExecutionHistory,
                  scene: SceneModel) -> Program:
    return backend.query(obs, history, scene)


def create_planner(settings, mode: str = "keypoint", programs: Optional[Sequence[str]] = None,
                   transcript_path: Optional[Union[str, Path]] = None, config_id: Optional[int] = None,
                   prompt_mode: str = "multi_step") -> PlannerBackend:
    """
    Backend selected by settings.planner.backend

    Args:
        settings: IkerSettings (planner section plus PLANNER_* credentials)
        mode: "keypoint" or "pose"
        programs: Hand-authored programs for the scripted backend
        transcript_path: Recorded transcript for the replay backend (defaults to planner.replay_path)
        config_id: Transcript configuration to replay
        prompt_mode: single_step or multi_step role instructions

    Returns:
        Configured backend
    """
    planner_config = settings.planner
    common = {
        "mode": mode,
        "prompt_mode": prompt_mode,
        "max_attempts": planner_config.max_attempts,
        "reveal_color_tags": planner_config.reveal_color_tags,
        "prefix": load_prompt_prefix(planner_config.prompt_prefix_path),
    }
    backend = planner_config.backend
    if backend == "scripted":
        if programs is None:
            raise PlannerError("scripted planner needs programs")
        common["max_attempts"] = 1
        return ScriptedPlanner(programs, **common)
    if backend == "replay":
        path = transcript_path or planner_config.replay_path
        if path is None:
            raise PlannerError("replay planner needs a transcript path")
        return ReplayPlanner.from_transcript(path, config_id, planner_config.completion_pointer, **common)
    if backend == "live":
        if not settings.planner_api_url:
            raise PlannerError("live planner needs PLANNER_API_URL")
        return LiveLLMPlanner(settings.planner_api_url, settings.planner_model, settings.planner_api_key,
                              pointer=planner_config.completion_pointer, timeout=planner_config.request_timeout,
                              **common)
    raise PlannerError(f"unknown planner backend {backend}")
