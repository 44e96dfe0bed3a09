"""
Benchmark task suites
Committed start/end configurations and the reward specs each condition trains on
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..config import FIXTURES_DIR, TASK_PRESETS, IkerSettings
from ..models.scene_models import LoopScenarioFile, TaskConfiguration, TaskSuiteFile
from ..planner.backends import PlannerBackend, PlannerError, ReplayPlanner, ScriptedPlanner
from ..planner.interpreter import program_targets
from ..planner.pose_baseline import pose_program_to_targets, poses_from_rows
from ..planner.program import parse_program
from ..planner.prompts import ExecutionHistory, summarize_observation
from ..reward.keypoint_reward import RewardSpec
from ..rl.env import TaskDefinition
from ..sim.scene import SceneModel, load_scene, prepare_keypoints

logger = logging.getLogger(__name__)


class MissingFixtureError(FileNotFoundError):
    """A committed suite, scenario or transcript file is absent"""


def _fixtures(fixtures_dir: Optional[Union[str, Path]]) -> Path:
    return Path(fixtures_dir) if fixtures_dir is not None else FIXTURES_DIR


def suite_path(task: str, fixtures_dir: Optional[Union[str, Path]] = None) -> Path:
    return _fixtures(fixtures_dir) / "suites" / f"{task}.json"


def transcript_path(task: str, representation: str, fixtures_dir: Optional[Union[str, Path]] = None) -> Path:
    """Recorded planner transcript for a task in keypoint or pose representation"""
    return _fixtures(fixtures_dir) / "transcripts" / f"{task}_{representation}.json"


def scenario_path(name: str, fixtures_dir: Optional[Union[str, Path]] = None) -> Path:
    return _fixtures(fixtures_dir) / "scenarios" / f"{name}.json"


def _read(path: Path) -> dict:
    if not path.exists():
        logger.error(f"Fixture not found: {path}")
        raise MissingFixtureError(f"missing fixture {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def load_suite(task: str, fixtures_dir: Optional[Union[str, Path]] = None) -> TaskSuiteFile:
    if task not in TASK_PRESETS:
        raise ValueError(f"unknown task {task}; expected one of {sorted(TASK_PRESETS)}")
    suite = TaskSuiteFile.model_validate(_read(suite_path(task, fixtures_dir)))
    if suite.task != task:
        raise ValueError(f"suite file for {task} declares task {suite.task}")
    return suite


def load_scenario(source: Union[str, Path], fixtures_dir: Optional[Union[str, Path]] = None) -> LoopScenarioFile:
    """Loop scenario by fixture name or path"""
    path = Path(source)
    if not path.suffix:
        path = scenario_path(str(source), fixtures_dir)
    return LoopScenarioFile.model_validate(_read(path))


def scenario_setup(scenario: LoopScenarioFile,
                   settings: IkerSettings) -> Tuple[SceneModel, str, IkerSettings, PlannerBackend]:
    """Scene, instruction, settings and planner of a loop scenario; its disturbances replace the configured ones"""
    loop_update = {"disturbances": scenario.disturbances}
    if scenario.max_iterations is not None:
        loop_update["max_iterations"] = scenario.max_iterations
    settings = settings.model_copy(update={"loop": settings.loop.model_copy(update=loop_update)})
    reveal = settings.planner.reveal_color_tags
    if scenario.planner == "scripted":
        planner = ScriptedPlanner(scenario.programs, reveal_color_tags=reveal)
    else:
        planner = ReplayPlanner(scenario.programs, max_attempts=settings.planner.max_attempts, reveal_color_tags=reveal)
    return load_scene(scenario.scene), scenario.instruction, settings, planner


@dataclass(frozen=True)
class BenchmarkCase:
    """One configuration, labeled at its start poses, with its ground-truth targets"""
    task: str
    configuration: TaskConfiguration
    scene: SceneModel
    instruction: str
    directive: str
    ground_truth: RewardSpec

    @property
    def config_id(self) -> int:
        return self.configuration.config_id

    def task_definition(self, spec: RewardSpec, directive: Optional[str] = None, condition: str = "") -> TaskDefinition:
        name = f"{self.task}/{condition or 'annotated'}/{self.config_id:02d}"
        return TaskDefinition(self.scene, spec, directive or self.directive, name)


def build_case(suite: TaskSuiteFile, configuration: TaskConfiguration, settings: IkerSettings) -> BenchmarkCase:
    """
    Label the configuration's start scene and evaluate its annotated program

    Raises:
        ProgramError: when the committed program does not validate against the labeled scene
    """
    start = poses_from_rows(configuration.start_poses)
    scene = prepare_keypoints(load_scene(suite.scene).with_object_poses(start))
    program = parse_program(configuration.program, scene)
    directive = program.directive
    expected = TASK_PRESETS[suite.task]["directive"]
    if directive.kind != expected:
        raise ValueError(f"{suite.task} configuration {configuration.config_id} uses {directive.kind}, "
                         f"expected {expected}")
    spec = RewardSpec.from_config(program_targets(program, scene), directive.object_id,
                                  settings.reward, settings.simulator)
    return BenchmarkCase(suite.task, configuration, scene, configuration.instruction or suite.instruction,
                         directive.kind, spec)


def load_cases(task: str, settings: IkerSettings, config_ids: Optional[List[int]] = None,
               fixtures_dir: Optional[Union[str, Path]] = None) -> List[BenchmarkCase]:
    suite = load_suite(task, fixtures_dir)
    selected = [c for c in suite.configurations if config_ids is None or c.config_id in config_ids]
    if not selected:
        raise ValueError(f"no {task} configurations selected")
    if config_ids is not None and len(selected) != len(set(config_ids)):
        missing = sorted(set(config_ids) - {c.config_id for c in selected})
        raise ValueError(f"{task} has no configurations {missing}")
    return [build_case(suite, c, settings) for c in selected]


def annotated_pose_spec(case: BenchmarkCase, settings: IkerSettings) -> RewardSpec:
    """Ground-truth goal poses converted to keypoint targets"""
    object_id = case.ground_truth.interaction_object
    poses = {k: v for k, v in poses_from_rows(case.configuration.target_poses).items() if k == object_id}
    return RewardSpec.from_config(pose_program_to_targets(poses, case.scene), object_id,
                                  settings.reward, settings.simulator)


def planned_task(case: BenchmarkCase, planner: PlannerBackend, settings: IkerSettings,
                 condition: str) -> TaskDefinition:
    """
    Ask the planner for the configuration's single step

    Raises:
        PlannerError: when the planner gives up or reports done without acting
    """
    obs = summarize_observation(case.scene, case.scene.initial_poses(), case.instruction)
    program = planner.query(obs, ExecutionHistory(), case.scene)
    if program.done:
        raise PlannerError("planner reported done before acting")
    spec = RewardSpec.from_config(program_targets(program, case.scene), program.directive.object_id,
                                  settings.reward, settings.simulator)
    return case.task_definition(spec, program.directive.kind, condition)


def condition_tasks(cases: List[BenchmarkCase], condition: str, settings: IkerSettings) -> Dict[int, TaskDefinition]:
    """Tasks of the scripted conditions (annotated, annotated_pose) keyed by configuration id"""
    if condition == "annotated":
        return {c.config_id: c.task_definition(c.ground_truth, condition=condition) for c in cases}
    if condition == "annotated_pose":
        return {c.config_id: c.task_definition(annotated_pose_spec(c, settings), condition=condition)
                for c in cases}
    raise ValueError(f"{condition} is not a scripted condition")
