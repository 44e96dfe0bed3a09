"""
Planner prompts
Text serialization of observations and execution history, and the role instructions per mode
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..sim.geometry import Pose, rpy_of
from ..sim.scene import SceneModel

logger = logging.getLogger(__name__)

PROMPT_MODES = ("single_step", "multi_step", "pose_baseline")

_ROLE = {
    "single_step": """You control a robot gripper above a table. Labeled keypoints mark object extremities and
free surface locations. Decide which object the robot should interact with and where that object's
keypoints must end up to complete the task in one step.""",
    "multi_step": """You control a robot gripper above a table. Labeled keypoints mark object extremities and
free surface locations. Break the task down into executable steps. For the next step only, decide which
object the robot should interact with and where that object's keypoints must end up. When the task is
already complete, answer with `done = true` alone.""",
    "pose_baseline": """You control a robot gripper above a table. Each object has a pose. Decide which object
the robot should interact with and the final pose of that object. Give positions in meters (x, y, z)
and orientations as roll, pitch, yaw in radians about the fixed x, y and z axes.""",
}

_KEYPOINT_FORMAT = """Answer with a program, one statement per line:
  grasp(<object>) or push(<object>)      the interaction and the object it applies to
  target[<label>] = <expr>               final position of one of that object's keypoints
  done = true                            only when the task is complete
Expressions: kp(<label>), vec(x, y, z), <expr> + <expr>, <expr> - <expr>, <number> * <expr>,
mid(<expr>, <expr>), centroid(<label>, ...), offset_along(<label a>, <label b>, <meters>).
Lines starting with # are ignored."""

_POSE_FORMAT = """Answer with a program, one statement per line:
  grasp(<object>) or push(<object>)
  pose[<object>] = (x, y, z, roll, pitch, yaw)
  done = true                            only when the task is complete
Lines starting with # are ignored."""


@dataclass(frozen=True)
class KeypointObservation:
    label: int
    position: Tuple[float, float, float]
    color_tag: Optional[str]


@dataclass(frozen=True)
class ObservationSummary:
    """What the planner sees: unpruned keypoints, workspace bounds, instruction and object poses"""
    keypoints: Tuple[KeypointObservation, ...]
    workspace_min: Tuple[float, float, float]
    workspace_max: Tuple[float, float, float]
    instruction: str
    object_poses: Tuple[Tuple[str, Tuple[float, ...]], ...] = ()

    def keypoint_map(self) -> Dict[int, np.ndarray]:
        return {kp.label: np.array(kp.position) for kp in self.keypoints}

    def render(self, reveal_color_tags: bool = True, include_poses: bool = False) -> str:
        lines = [
            "Workspace: " + ", ".join(
                f"{axis} in [{lo:.2f}, {hi:.2f}]"
                for axis, lo, hi in zip("xyz", self.workspace_min, self.workspace_max)),
        ]
        if include_poses:
            lines.append("Object poses (x, y, z, roll, pitch, yaw):")
            for object_id, values in self.object_poses:
                lines.append(f"  {object_id}: (" + ", ".join(f"{v:.2f}" for v in values) + ")")
        else:
            lines.append("Keypoints (label: x, y, z in meters):")
            if reveal_color_tags:
                groups: Dict[str, List[KeypointObservation]] = {}
                for kp in self.keypoints:
                    groups.setdefault(kp.color_tag or "untagged", []).append(kp)
                for tag, group in groups.items():
                    lines.append(f"  [{tag}]")
                    lines.extend(f"    {_format_keypoint(kp)}" for kp in group)
            else:
                lines.extend(f"  {_format_keypoint(kp)}" for kp in self.keypoints)
        lines.append(f"Task: {self.instruction}")
        return "\n".join(lines)


def _format_keypoint(kp: KeypointObservation) -> str:
    x, y, z = kp.position
    return f"{kp.label}: ({x:.2f}, {y:.2f}, {z:.2f})"


def summarize_observation(scene: SceneModel, object_poses: Mapping[str, Pose], instruction: str,
                          scales: Optional[Mapping[str, float]] = None) -> ObservationSummary:
    """Observation of a labeled scene at the given (tracked) object poses"""
    positions = scene.keypoint_positions(object_poses, scales)
    keypoints = tuple(
        KeypointObservation(kp.label, tuple(round(float(v), 2) for v in positions[kp.label]),
                            scene.color_of(kp.object_id))
        for kp in sorted(scene.keypoints, key=lambda k: k.label)
    )
    poses = dict(scene.initial_poses())
    poses.update(object_poses)
    pose_rows = tuple(
        (obj.id, tuple(float(v) for v in np.concatenate([poses[obj.id].position, rpy_of(poses[obj.id].orientation)])))
        for obj in scene.manipulable_objects
    )
    return ObservationSummary(keypoints, tuple(float(v) for v in scene.workspace_min),
                              tuple(float(v) for v in scene.workspace_max), instruction, pose_rows)


@dataclass(frozen=True)
class HistoryEntry:
    observation_summary: str
    program_text: str
    success: bool
    final_mean_distance: float


@dataclass
class ExecutionHistory:
    """Append-only record of executed steps, oldest first"""
    _entries: List[HistoryEntry] = field(default_factory=list)

    def append(self, entry: HistoryEntry) -> None:
        self._entries.append(entry)

    @property
    def entries(self) -> Tuple[HistoryEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


def load_prompt_prefix(path: Optional[str]) -> str:
    if not path:
        return ""
    return Path(path).read_text(encoding="utf-8").rstrip() + "\n\n"


def build_prompt(obs: ObservationSummary, history: ExecutionHistory, mode: str = "multi_step",
                 reveal_color_tags: bool = True, prefix: str = "") -> str:
    """
    Deterministic planner prompt

    Args:
        obs: Current observation
        history: Executed steps, rendered oldest first
        mode: single_step, multi_step or pose_baseline
        reveal_color_tags: Group keypoints under their object's color tag
        prefix: Optional in-context text placed before everything else

    Returns:
        Prompt text
    """
    if mode not in PROMPT_MODES:
        raise ValueError(f"unknown prompt mode {mode}")
    pose_mode = mode == "pose_baseline"
    sections = [
        prefix + _ROLE[mode],
        _POSE_FORMAT if pose_mode else _KEYPOINT_FORMAT,
        "## Observation\n" + obs.render(reveal_color_tags, include_poses=pose_mode),
    ]
    if len(history):
        blocks = ["## Execution history"]
        for index, entry in enumerate(history.entries, start=1):
            outcome = "succeeded" if entry.success else "failed"
            blocks.append(
                f"### Step {index}\nObservation:\n{entry.observation_summary}\nProgram:\n"
                f"{entry.program_text.rstrip()}\nOutcome: {outcome}, "
                f"final mean keypoint distance {entry.final_mean_distance:.3f} m"
            )
        sections.append("\n\n".join(blocks))
    else:
        sections.append("## Execution history\nNo steps executed yet.")
    sections.append("## Answer\nReply with the program only.")
    return "\n\n".join(sections) + "\n"
