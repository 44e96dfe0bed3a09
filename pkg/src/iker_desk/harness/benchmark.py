"""
Benchmark runner
Trains one policy per task configuration and condition, then evaluates it in the training
distribution and in the deployment proxy
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import BENCH_CONDITIONS, TASK_PRESETS, IkerSettings, config_hash
from ..models.run_models import BenchmarkReport, GroupSummary, TrialResult
from ..planner.backends import PlannerBackend, PlannerError, create_planner
from ..rl.env import EpisodeOutcome, TaskDefinition, evaluate_policy
from ..rl.ppo import TrainingDivergenceError
from ..rl.trainer import train_task
from ..sim.simulator import TabletopSimulator
from .suite import BenchmarkCase, condition_tasks, load_cases, planned_task, transcript_path

logger = logging.getLogger(__name__)

WORLDS = ("train", "proxy")
EVAL_SEED_OFFSET = {"train": 500, "proxy": 700}


def training_seed(seed: int, config_id: int) -> int:
    return seed * 1000 + config_id


def evaluation_seed(seed: int, config_id: int, world: str) -> int:
    return training_seed(seed, config_id) + EVAL_SEED_OFFSET[world]


def trials_per_config(settings: IkerSettings, world: str) -> int:
    if world == "proxy":
        return settings.harness.proxy_trials_per_config
    return settings.harness.train_trials_per_config or settings.ppo.num_envs


def resolve_planner_source(task: str, representation: str, settings: IkerSettings,
                           fixtures_dir: Optional[Union[str, Path]] = None) -> Tuple[Optional[str], Optional[Path], str]:
    """
    Where automatic-condition programs come from: live endpoint, recorded transcript, or nowhere

    Returns:
        (source or None, transcript path, reason when unavailable)
    """
    if settings.planner_api_url:
        return "live", None, ""
    path = transcript_path(task, representation, fixtures_dir)
    if path.exists():
        return "replay", path, ""
    return None, None, f"no PLANNER_API_URL and no transcript {path.name}"


def _planner(settings: IkerSettings, source: str, path: Optional[Path], representation: str,
             config_id: int) -> PlannerBackend:
    planner_config = settings.planner.model_copy(update={"backend": source})
    return create_planner(settings.model_copy(update={"planner": planner_config}), representation,
                          transcript_path=path, config_id=config_id, prompt_mode="single_step")


def task_for_condition(case: BenchmarkCase, condition: str, settings: IkerSettings,
                       fixtures_dir: Optional[Union[str, Path]] = None) -> TaskDefinition:
    """
    Training task of a single configuration under a condition

    Raises:
        LookupError: automatic condition without a planner source
        PlannerError: when the planner gives up
    """
    if condition not in BENCH_CONDITIONS:
        raise ValueError(f"unknown condition {condition}")
    info = BENCH_CONDITIONS[condition]
    if info["source"] == "scripted":
        return condition_tasks([case], condition, settings)[case.config_id]
    source, path, reason = resolve_planner_source(case.task, info["representation"], settings, fixtures_dir)
    if source is None:
        raise LookupError(reason)
    return planned_task(case, _planner(settings, source, path, info["representation"], case.config_id),
                        settings, condition)


def _summarize(task: str, condition: str, world: str, rows: List[TrialResult], seed: int,
               digest: str) -> GroupSummary:
    distances = [r.final_mean_dist_m for r in rows if not math.isnan(r.final_mean_dist_m)]
    return GroupSummary(
        task=task, condition=condition, world=world,
        success_rate=float(np.mean([r.success for r in rows])) if rows else None,
        mean_final_distance=float(np.mean(distances)) if distances else None,
        trials=len(rows), seed=seed, config_hash=digest,
    )


def _failed_rows(task: str, condition: str, world: str, config_id: int, seed: int, trials: int) -> List[TrialResult]:
    return [TrialResult(task=task, condition=condition, world=world, config_id=config_id, env_id=i, seed=seed,
                        success=False, final_mean_dist_m=float("nan"), steps=0) for i in range(trials)]


def _outcome_rows(task: str, condition: str, world: str, config_id: int, seed: int,
                  outcome: EpisodeOutcome) -> List[TrialResult]:
    return [TrialResult(task=task, condition=condition, world=world, config_id=config_id, env_id=i, seed=seed,
                        success=bool(outcome.success[i]), final_mean_dist_m=float(outcome.final_distance[i]),
                        steps=int(outcome.steps[i])) for i in range(len(outcome.success))]


def run_condition(cases: List[BenchmarkCase], condition: str, worlds: Sequence[str], seed: int,
                  settings: IkerSettings, fixtures_dir: Optional[Union[str, Path]] = None) -> Dict[str, List[TrialResult]]:
    """
    Trial rows per world for one task and condition

    Raises:
        LookupError: automatic condition without a planner source (callers record it as skipped)
    """
    info = BENCH_CONDITIONS[condition]
    failures: Dict[int, str] = {}
    if info["source"] == "scripted":
        tasks = condition_tasks(cases, condition, settings)
    else:
        source, path, reason = resolve_planner_source(cases[0].task, info["representation"], settings, fixtures_dir)
        if source is None:
            raise LookupError(reason)
        tasks = {}
        for case in cases:
            try:
                planner = _planner(settings, source, path, info["representation"], case.config_id)
                tasks[case.config_id] = planned_task(case, planner, settings, condition)
            except PlannerError as e:
                logger.error(f"{case.task} configuration {case.config_id}: planner failed: {e}")
                failures[case.config_id] = str(e)

    rows: Dict[str, List[TrialResult]] = {world: [] for world in worlds}
    for case in cases:
        cid = case.config_id
        if cid in failures:
            for world in worlds:
                rows[world].extend(_failed_rows(case.task, condition, world, cid, evaluation_seed(seed, cid, world),
                                                trials_per_config(settings, world)))
            continue
        task = tasks[cid]
        try:
            result = train_task(task, settings.dr, settings.ppo, settings.simulator, training_seed(seed, cid))
        except TrainingDivergenceError as e:
            logger.error(f"{task.name}: training failed: {e}")
            for world in worlds:
                rows[world].extend(_failed_rows(case.task, condition, world, cid, evaluation_seed(seed, cid, world),
                                                trials_per_config(settings, world)))
            continue
        simulator = TabletopSimulator(task.scene, settings.simulator)
        for world in worlds:
            horizon = settings.loop.episode_horizon if world == "proxy" else settings.ppo.episode_horizon
            eval_seed = evaluation_seed(seed, cid, world)
            outcome = evaluate_policy(result.policy, task, simulator, settings.dr, eval_seed,
                                      trials_per_config(settings, world), world, horizon,
                                      settings.ppo.keypoints_per_policy, judge=case.ground_truth)
            logger.info(f"{task.name} [{world}]: success {outcome.success_rate:.3f}")
            rows[world].extend(_outcome_rows(case.task, condition, world, cid, eval_seed, outcome))
    return rows


def run_benchmark(tasks: Sequence[str], conditions: Sequence[str], worlds: Sequence[str] = WORLDS, seed: int = 0,
                  settings: Optional[IkerSettings] = None, config_ids: Optional[List[int]] = None,
                  fixtures_dir: Optional[Union[str, Path]] = None) -> BenchmarkReport:
    """
    Run the evaluation protocol

    Args:
        tasks: Task ids from TASK_PRESETS
        conditions: Condition ids from BENCH_CONDITIONS
        worlds: "train" and/or "proxy"
        seed: Base seed; every configuration derives its own training and evaluation seeds
        settings: Configuration (defaults to IkerSettings())
        config_ids: Optional subset of configuration ids
        fixtures_dir: Alternative fixtures root

    Returns:
        Trial rows and one summary per task x condition x world; unavailable automatic
        conditions appear with status "skipped"

    Raises:
        MissingFixtureError: when a task suite is absent
    """
    settings = settings or IkerSettings()
    for kind, values, known in (("task", tasks, TASK_PRESETS), ("condition", conditions, BENCH_CONDITIONS),
                                ("world", worlds, WORLDS)):
        unknown = [v for v in values if v not in known]
        if unknown:
            raise ValueError(f"unknown {kind} {unknown}")

    digest = config_hash(settings)
    report = BenchmarkReport(metadata={
        "seed": seed, "config_hash": digest, "tasks": list(tasks), "conditions": list(conditions),
        "worlds": list(worlds), "config_ids": config_ids,
    })
    for task in tasks:
        cases = load_cases(task, settings, config_ids, fixtures_dir)
        for condition in conditions:
            logger.info(f"Benchmark {task} / {condition}: {len(cases)} configurations")
            try:
                rows = run_condition(cases, condition, worlds, seed, settings, fixtures_dir)
            except LookupError as e:
                logger.warning(f"Skipping {task} / {condition}: {e}")
                report.groups.extend(GroupSummary(task=task, condition=condition, world=world, status="skipped",
                                                  reason=str(e), seed=seed, config_hash=digest) for world in worlds)
                continue
            for world in worlds:
                report.trials.extend(rows[world])
                group = _summarize(task, condition, world, rows[world], seed, digest)
                report.groups.append(group)
                logger.info(f"{task} / {condition} / {world}: success {group.success_rate:.3f} "
                            f"over {group.trials} trials")
    return report
