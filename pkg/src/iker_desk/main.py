#!/usr/bin/env python3
"""
iker-desk command line
Benchmark runs, single-task training and evaluation, the iterative loop, trajectory replay,
program validation and the transcript planner service
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import uvicorn

from .config import BENCH_CONDITIONS, DEFAULT_CONFIG_PATH, TASK_PRESETS, IkerSettings, config_hash, load_config
from .controllers.loop_controller import run_loop
from .controllers.run_directory import replay
from .harness.benchmark import WORLDS, evaluation_seed, run_benchmark, task_for_condition, training_seed
from .harness.report import emit_report
from .harness.suite import load_cases, load_scenario, scenario_setup
from .planner.backends import create_planner
from .planner.interpreter import program_targets
from .planner.program import format_program, parse_pose_program, parse_program
from .rl.checkpoint import checkpoint_config_hash, load_checkpoint, save_checkpoint
from .rl.env import evaluate_policy
from .rl.trainer import train_task
from .services.transcript_server import TranscriptService, create_app
from .sim.scene import load_scene, prepare_keypoints
from .sim.simulator import TabletopSimulator

logger = logging.getLogger(__name__)


def _id_list(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated configuration ids, got {value!r}")


def _settings(args) -> IkerSettings:
    path = args.config_file
    if path is None and DEFAULT_CONFIG_PATH.exists():
        path = DEFAULT_CONFIG_PATH
    settings = load_config(path)
    logging.getLogger().setLevel(logging.DEBUG if args.debug or settings.debug else settings.log_level)
    return settings


def _single_case(args, settings: IkerSettings):
    return load_cases(args.task, settings, [args.config_id])[0]


def cmd_bench(args) -> int:
    settings = _settings(args)
    tasks = args.task or list(TASK_PRESETS)
    conditions = args.condition or ["annotated"]
    worlds = args.world or list(WORLDS)
    report = run_benchmark(tasks, conditions, worlds, args.seed, settings, args.configs)
    paths = emit_report(report, args.out)
    for group in report.groups:
        rate = "skipped" if group.status != "ok" else f"{group.success_rate:.3f}"
        print(f"{group.task:10s} {group.condition:15s} {group.world:6s} {rate} ({group.trials} trials)")
    print(f"Report written to {paths['trials'].parent}")
    return 0


def cmd_train(args) -> int:
    settings = _settings(args)
    case = _single_case(args, settings)
    task = task_for_condition(case, args.condition, settings)
    seed = training_seed(args.seed, case.config_id)
    result = train_task(task, settings.dr, settings.ppo, settings.simulator, seed)
    out = Path(args.out) if args.out else Path(settings.output_dir) / f"{args.task}_{args.condition}_{case.config_id:02d}.json"
    save_checkpoint(result.policy, out, config_hash(settings), {
        "task": args.task, "config_id": case.config_id, "condition": args.condition, "seed": seed,
        "updates": result.updates, "best_success": result.best_success,
    })
    print(f"{task.name}: best success {result.best_success:.3f} after {result.updates} updates -> {out}")
    return 0


def cmd_eval(args) -> int:
    settings = _settings(args)
    stored = checkpoint_config_hash(args.checkpoint)
    if stored and stored != config_hash(settings):
        logger.warning(f"Checkpoint was trained with configuration {stored}, evaluating with {config_hash(settings)}")
    policy = load_checkpoint(args.checkpoint)
    case = _single_case(args, settings)
    task = task_for_condition(case, args.condition, settings)
    horizon = settings.loop.episode_horizon if args.world == "proxy" else settings.ppo.episode_horizon
    trials = args.trials or (settings.harness.proxy_trials_per_config if args.world == "proxy" else settings.ppo.num_envs)
    outcome = evaluate_policy(policy, task, TabletopSimulator(task.scene, settings.simulator), settings.dr,
                              evaluation_seed(args.seed, case.config_id, args.world), trials, args.world, horizon,
                              settings.ppo.keypoints_per_policy, judge=case.ground_truth)
    print(json.dumps({
        "task": task.name,
        "world": args.world,
        "trials": trials,
        "success_rate": outcome.success_rate,
        "mean_final_distance": float(outcome.final_distance.mean()),
    }, indent=2))
    return 0


def cmd_loop(args) -> int:
    settings = _settings(args)
    if args.scenario:
        scene, instruction, settings, planner = scenario_setup(load_scenario(args.scenario), settings)
        instruction = args.instruction or instruction
    else:
        if not args.scene or not args.instruction:
            raise ValueError("loop needs --scenario, or --scene together with --instruction")
        scene = load_scene(args.scene)
        instruction = args.instruction
        if args.planner:
            settings = settings.model_copy(
                update={"planner": settings.planner.model_copy(update={"backend": args.planner})})
        planner = create_planner(settings, args.mode, transcript_path=args.transcript)

    run_dir = args.out or str(Path(settings.output_dir) / "loop")
    records = run_loop(scene, instruction, settings, planner, args.seed, run_dir)
    for record in records:
        if record.done:
            status = "done"
        elif record.error:
            status = f"error: {record.error}"
        else:
            status = "success" if record.outcome.success else "failed"
        print(f"iteration {record.index}: {status}")
    print(f"Run directory: {run_dir}")
    return 0 if records and records[-1].done else 1


def cmd_replay(args) -> int:
    logging.getLogger().setLevel(logging.DEBUG if args.debug else logging.INFO)
    print(json.dumps(replay(args.path), indent=2))
    return 0


def cmd_validate_program(args) -> int:
    settings = _settings(args)
    if args.scene:
        scene = prepare_keypoints(load_scene(args.scene))
    elif args.task and args.config_id:
        scene = _single_case(args, settings).scene
    else:
        raise ValueError("validate-program needs --scene, or --task together with --config-id")
    text = Path(args.program).read_text(encoding="utf-8")
    program = parse_pose_program(text, scene) if args.pose else parse_program(text, scene)
    print(format_program(program), end="")
    if not program.done:
        targets = program_targets(program, scene)
        print(f"# {program.directive.kind}({program.directive.object_id})")
        for label, position in sorted(targets.items()):
            print(f"# target {label}: ({position[0]:.4f}, {position[1]:.4f}, {position[2]:.4f})")
    return 0


def cmd_serve_transcripts(args) -> int:
    logging.getLogger().setLevel(logging.DEBUG if args.debug else logging.INFO)
    service = TranscriptService.from_file(args.transcript, args.config_id)
    logger.info(f"Serving {service.status()['responses']} recorded responses at http://{args.host}:{args.port}")
    uvicorn.run(create_app(service), host=args.host, port=args.port, log_level="debug" if args.debug else "info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iker-desk", description="Keypoint-reward planning and training at desk scale")
    parser.add_argument("--debug", action="store_true", help="Verbose logging")
    parser.add_argument("--config-file", default=None, help="JSON or YAML configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="Run the benchmark protocol and write report files")
    bench.add_argument("--task", action="append", choices=sorted(TASK_PRESETS), help="Task (repeatable; default all)")
    bench.add_argument("--condition", action="append", choices=sorted(BENCH_CONDITIONS),
                       help="Condition (repeatable; default annotated)")
    bench.add_argument("--world", action="append", choices=WORLDS, help="Evaluation world (repeatable; default both)")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default="bench_out", help="Report directory")
    bench.add_argument("--configs", type=_id_list, default=None, help="Configuration ids, e.g. 1,2,5")
    bench.set_defaults(func=cmd_bench)

    for name, func, help_text in (("train", cmd_train, "Train one configuration and save a checkpoint"),
                                  ("eval", cmd_eval, "Evaluate a checkpoint on one configuration")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--task", required=True, choices=sorted(TASK_PRESETS))
        p.add_argument("--config-id", type=int, required=True)
        p.add_argument("--condition", default="annotated", choices=sorted(BENCH_CONDITIONS))
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        if name == "train":
            p.add_argument("--out", default=None, help="Checkpoint path")
        else:
            p.add_argument("checkpoint", help="Policy checkpoint")
            p.add_argument("--world", default="train", choices=WORLDS)
            p.add_argument("--trials", type=int, default=None)

    loop = sub.add_parser("loop", help="Run the iterative plan-train-deploy loop")
    loop.add_argument("--scenario", default=None, help="Scenario fixture name or path")
    loop.add_argument("--scene", default=None, help="Scene file (with --instruction)")
    loop.add_argument("--instruction", default=None)
    loop.add_argument("--planner", default=None, choices=["replay", "live"])
    loop.add_argument("--transcript", default=None, help="Transcript for the replay planner")
    loop.add_argument("--mode", default="keypoint", choices=["keypoint", "pose"])
    loop.add_argument("--seed", type=int, default=0)
    loop.add_argument("--out", default=None, help="Run directory")
    loop.set_defaults(func=cmd_loop)

    rep = sub.add_parser("replay", help="Recompute metrics from a trajectory log")
    rep.add_argument("path", help="Iteration directory or trajectory.jsonl")
    rep.set_defaults(func=cmd_replay)

    val = sub.add_parser("validate-program", help="Parse a program against a scene and print its targets")
    val.add_argument("program", help="Program file")
    val.add_argument("--scene", default=None)
    val.add_argument("--task", default=None, choices=sorted(TASK_PRESETS))
    val.add_argument("--config-id", type=int, default=None)
    val.add_argument("--pose", action="store_true", help="Pose-baseline program")
    val.set_defaults(func=cmd_validate_program)

    serve = sub.add_parser("serve-transcripts", help="Answer chat-completion requests from a recorded transcript")
    serve.add_argument("transcript")
    serve.add_argument("--config-id", type=int, default=None)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8765)
    serve.set_defaults(func=cmd_serve_transcripts)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, LookupError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        parser.exit(1, f"error: {e}\n")


if __name__ == "__main__":
    sys.exit(main())
