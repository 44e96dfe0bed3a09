"""
Loop run directories
One subdirectory per iteration with the prompt, planner output, program, checkpoint, metrics and trajectory
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..models.run_models import IterationRecord
from ..reward.keypoint_reward import RewardBreakdown, RewardSpec, mean_target_distance
from ..sim.simulator import SimState

logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectory.jsonl"
TARGETS_FILE = "targets.json"


class TrajectoryLog:
    """JSON-lines writer: one line per control step plus a final settled line"""

    def __init__(self, path: Path):
        self.path = path
        self._handle = path.open("w", encoding="utf-8")

    def write_step(self, step: int, state: SimState, keypoints: np.ndarray, breakdown: RewardBreakdown) -> None:
        line = {
            "kind": "step",
            "t": step,
            "state": state.snapshot(0),
            "keypoints": np.asarray(keypoints)[0].tolist(),
            "reward": breakdown.as_dict(0),
        }
        self._handle.write(json.dumps(line) + "\n")

    def write_final(self, state: SimState, keypoints: np.ndarray, steps: int) -> None:
        line = {
            "kind": "final",
            "steps": int(steps),
            "state": state.snapshot(0),
            "keypoints": np.asarray(keypoints)[0].tolist(),
        }
        self._handle.write(json.dumps(line) + "\n")

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()


class RunDirectory:
    """
    Writer for a loop run

    Layout:
        <root>/iterations.json
        <root>/iteration_01/prompt.txt, planner_output.txt, program.txt, policy.json,
                            metrics.json, targets.json, trajectory.jsonl
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Cannot create run directory {self.root}: {e}")
            raise

    def iteration_dir(self, index: int) -> Path:
        path = self.root / f"iteration_{index:02d}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def write_text(self, index: int, name: str, text: str) -> Path:
        path = self.iteration_dir(index) / name
        path.write_text(text, encoding="utf-8")
        return path

    def write_json(self, index: int, name: str, data: Any) -> Path:
        path = self.iteration_dir(index) / name
        path.write_text(json.dumps(data, indent=2, default=str), encoding="utf-8")
        return path

    def write_planner_exchange(self, index: int, prompt: Optional[str], responses: Sequence[str]) -> None:
        if prompt is not None:
            self.write_text(index, "prompt.txt", prompt)
        separator = "\n\n----- retry -----\n\n"
        self.write_text(index, "planner_output.txt", separator.join(responses))

    def write_targets(self, index: int, spec: RewardSpec) -> Path:
        return self.write_json(index, TARGETS_FILE, {
            "interaction_object": spec.interaction_object,
            "labels": list(spec.labels),
            "targets": spec.target_array().tolist(),
            "success_threshold": spec.success_threshold,
        })

    def trajectory(self, index: int) -> TrajectoryLog:
        return TrajectoryLog(self.iteration_dir(index) / TRAJECTORY_FILE)

    def write_records(self, records: List[IterationRecord]) -> Path:
        path = self.root / "iterations.json"
        path.write_text(json.dumps([r.model_dump(mode="json") for r in records], indent=2), encoding="utf-8")
        return path


def replay(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Recompute deployment metrics from a logged trajectory

    Args:
        path: trajectory.jsonl, or the iteration directory holding it next to targets.json

    Returns:
        success, final_mean_distance, steps and total_reward as recomputed from the log
    """
    path = Path(path)
    directory = path if path.is_dir() else path.parent
    trajectory_path = directory / TRAJECTORY_FILE if path.is_dir() else path
    targets = json.loads((directory / TARGETS_FILE).read_text(encoding="utf-8"))

    steps: List[Dict[str, Any]] = []
    final: Optional[Dict[str, Any]] = None
    with trajectory_path.open("r", encoding="utf-8") as handle:
        for raw in handle:
            if not raw.strip():
                continue
            line = json.loads(raw)
            if line["kind"] == "final":
                final = line
            else:
                steps.append(line)
    if final is None:
        raise ValueError(f"{trajectory_path} has no final settled line")

    distance = float(mean_target_distance(np.array(final["keypoints"]), np.array(targets["targets"])))
    return {
        "success": distance <= targets["success_threshold"],
        "final_mean_distance": distance,
        "steps": final["steps"],
        "logged_steps": len(steps),
        "total_reward": float(sum(line["reward"]["total"] for line in steps)),
    }
