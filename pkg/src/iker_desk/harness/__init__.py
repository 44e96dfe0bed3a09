"""
Benchmark suites, protocol runner and report files
"""

from .benchmark import WORLDS, evaluation_seed, run_benchmark, run_condition, task_for_condition, training_seed
from .report import emit_report, read_trials, recount
from .suite import BenchmarkCase, MissingFixtureError, build_case, load_cases, load_scenario, load_suite
