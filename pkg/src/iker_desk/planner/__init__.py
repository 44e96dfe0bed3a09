"""
Keypoint programs and planner backends
"""

from .backends import (LiveLLMPlanner, PlannerBackend, PlannerError, ReplayPlanner, ScriptedPlanner, create_planner,
                       query_planner)
from .interpreter import interpret, program_targets
from .pose_baseline import pose_program_to_targets
from .program import KeypointProgram, PoseProgram, ProgramError, format_program, parse_pose_program, parse_program
from .prompts import ExecutionHistory, HistoryEntry, ObservationSummary, build_prompt, summarize_observation
