"""
Pydantic models for loop iterations, disturbances and benchmark reports
"""

from datetime import datetime
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator


class Disturbance(BaseModel):
    """Scheduled intervention applied during a deployment"""
    iteration: int = Field(default=1, ge=1, description="Loop iteration the disturbance fires in")
    trigger_step: int = Field(default=0, ge=0, description="Control step within the deployment")
    effect: Literal["teleport_object", "force_release_grasp", "swap_instruction"]
    object_id: Optional[str] = None
    position: Optional[Tuple[float, float, float]] = None
    yaw: float = 0.0
    instruction: Optional[str] = None

    @model_validator(mode="after")
    def check_effect_arguments(self):
        if self.effect == "teleport_object" and (self.object_id is None or self.position is None):
            raise ValueError("teleport_object needs object_id and position")
        if self.effect == "swap_instruction" and not self.instruction:
            raise ValueError("swap_instruction needs an instruction")
        return self


class DeploymentOutcome(BaseModel):
    """Result of executing a policy in the deployment world"""
    success: bool
    final_mean_distance: float = Field(description="Mean keypoint-to-target distance in m")
    steps: int
    disturbances_applied: List[str] = Field(default_factory=list)


class IterationRecord(BaseModel):
    """One pass of observe, plan, train, deploy and record"""
    index: int
    instruction: str
    observation_summary: str
    program_text: Optional[str] = None
    done: bool = False
    training_metrics: Dict[str, Any] = Field(default_factory=dict)
    outcome: Optional[DeploymentOutcome] = None
    wall_time: float = 0.0
    error: Optional[str] = None
    timestamp: datetime = Field(default_factory=datetime.now)


class TrialResult(BaseModel):
    """A single evaluated episode of the benchmark protocol"""
    task: str
    condition: str
    world: str
    config_id: int
    env_id: int
    seed: int
    success: bool
    final_mean_dist_m: float
    steps: int


class GroupSummary(BaseModel):
    """Aggregate over one task x condition x world cell"""
    task: str
    condition: str
    world: str
    status: Literal["ok", "skipped", "error"] = "ok"
    reason: Optional[str] = None
    success_rate: Optional[float] = None
    mean_final_distance: Optional[float] = None
    trials: int = 0
    seed: int = 0
    config_hash: str = ""


class BenchmarkReport(BaseModel):
    """Benchmark output: trial rows plus per-group summaries"""
    trials: List[TrialResult] = Field(default_factory=list)
    groups: List[GroupSummary] = Field(default_factory=list)
    metadata: Optional[Dict[str, Any]] = None
