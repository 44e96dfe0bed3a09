"""
Loop orchestration and run-directory artifacts
"""

from .loop_controller import DeploymentWorld, LoopController, deploy_policy, run_loop
from .run_directory import RunDirectory, TrajectoryLog, replay
