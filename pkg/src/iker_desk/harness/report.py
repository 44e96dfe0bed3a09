"""
Benchmark report files
Trial-level CSV, summary JSON and success-rate plot data
"""

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Tuple, Union

from ..models.run_models import BenchmarkReport

logger = logging.getLogger(__name__)

TRIAL_COLUMNS = ["task", "condition", "world", "config_id", "env_id", "seed", "success", "final_mean_dist_m", "steps"]


def emit_report(report: BenchmarkReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """
    Write trials.csv, summary.json and plot_data.tsv

    Args:
        report: Finished benchmark report
        out_dir: Output directory (created when missing)

    Returns:
        Paths of the written files keyed by kind
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        logger.error(f"Cannot create report directory {out_dir}: {e}")
        raise

    paths = {
        "trials": out_dir / "trials.csv",
        "summary": out_dir / "summary.json",
        "plot": out_dir / "plot_data.tsv",
    }
    with paths["trials"].open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRIAL_COLUMNS)
        for trial in report.trials:
            writer.writerow([trial.task, trial.condition, trial.world, trial.config_id, trial.env_id, trial.seed,
                             int(trial.success), repr(float(trial.final_mean_dist_m)), trial.steps])

    summary = {
        "metadata": report.metadata or {},
        "groups": [group.model_dump(mode="json") for group in report.groups],
    }
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")

    with paths["plot"].open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, delimiter="\t", lineterminator="\n")
        writer.writerow(["task", "world", "condition", "status", "success_rate", "trials"])
        for group in report.groups:
            rate = "" if group.success_rate is None else f"{group.success_rate:.6f}"
            writer.writerow([group.task, group.world, group.condition, group.status, rate, group.trials])

    logger.info(f"Wrote {len(report.trials)} trials and {len(report.groups)} group summaries to {out_dir}")
    return paths


def read_trials(path: Union[str, Path]) -> List[Dict[str, str]]:
    with Path(path).open("r", newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def recount(path: Union[str, Path]) -> Dict[Tuple[str, str, str], float]:
    """Success rate per (task, condition, world) recomputed from a trial CSV"""
    totals: Dict[Tuple[str, str, str], List[int]] = defaultdict(lambda: [0, 0])
    for row in read_trials(path):
        key = (row["task"], row["condition"], row["world"])
        totals[key][0] += int(row["success"])
        totals[key][1] += 1
    return {key: successes / count for key, (successes, count) in totals.items()}
