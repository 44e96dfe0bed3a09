"""
Pydantic models for scene files and task suite fixtures
"""

from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from .run_models import Disturbance

Vec3Field = Tuple[float, float, float]


class PoseSpec(BaseModel):
    """Pose as written in scene files: position plus either yaw (rad) or a (w, x, y, z) quaternion"""
    position: Vec3Field
    yaw: Optional[float] = None
    orientation: Optional[Tuple[float, float, float, float]] = None

    @model_validator(mode="after")
    def check_orientation(self):
        if self.yaw is not None and self.orientation is not None:
            raise ValueError("give either yaw or orientation, not both")
        return self


class WorkspaceSpec(BaseModel):
    """Axis-aligned workspace bounds in m"""
    min: Vec3Field
    max: Vec3Field

    @model_validator(mode="after")
    def check_bounds(self):
        if any(lo >= hi for lo, hi in zip(self.min, self.max)):
            raise ValueError("workspace min must be below max on every axis")
        return self


class ObjectSpec(BaseModel):
    """Oriented box object"""
    id: str = Field(min_length=1)
    half_extents: Vec3Field
    pose: PoseSpec
    manipulable: bool = True
    color_tag: str = "gray"

    @field_validator("half_extents")
    @classmethod
    def validate_half_extents(cls, v):
        if any(h <= 0 for h in v):
            raise ValueError("half_extents must be positive")
        return v


class StaticRegionSpec(BaseModel):
    """Rectangle (xmin, xmax, ymin, ymax) on a static surface that receives a keypoint grid"""
    object_id: str = Field(description="Static object owning the surface, or 'table'")
    rect: Tuple[float, float, float, float]
    spacing: Optional[float] = Field(default=None, gt=0)

    @field_validator("rect")
    @classmethod
    def validate_rect(cls, v):
        xmin, xmax, ymin, ymax = v
        if xmin > xmax or ymin > ymax:
            raise ValueError("region rect must be (xmin, xmax, ymin, ymax) with min <= max")
        return v


class SceneFile(BaseModel):
    """Top-level scene JSON"""
    workspace: WorkspaceSpec
    objects: List[ObjectSpec]
    static_regions: List[StaticRegionSpec] = Field(default_factory=list)
    gripper_home: Optional[Vec3Field] = None

    @model_validator(mode="after")
    def check_unique_ids(self):
        ids = [obj.id for obj in self.objects]
        if len(ids) != len(set(ids)):
            raise ValueError("object ids must be unique")
        if "table" in ids:
            raise ValueError("'table' is reserved for the support plane")
        return self


ObjectPoseRow = Tuple[str, float, float, float, float]  # (object_id, x, y, z, yaw)


class TaskConfiguration(BaseModel):
    """One start/end configuration of a benchmark task"""
    config_id: int = Field(ge=1)
    kind: Literal["translation", "rotation", "combined"]
    start_poses: List[ObjectPoseRow] = Field(description="Start poses overriding the suite scene")
    target_poses: List[ObjectPoseRow] = Field(description="Ground-truth goal poses")
    program: str = Field(description="Ground-truth keypoint program (annotated condition)")
    instruction: Optional[str] = None


class TaskSuiteFile(BaseModel):
    """Committed fixture holding every configuration of one task"""
    task: str
    instruction: str
    scene: SceneFile
    configurations: List[TaskConfiguration]

    @model_validator(mode="after")
    def check_configurations(self):
        ids = [c.config_id for c in self.configurations]
        if len(ids) != len(set(ids)):
            raise ValueError("configuration ids must be unique")
        known = {obj.id for obj in self.scene.objects}
        for c in self.configurations:
            for row in c.start_poses + c.target_poses:
                if row[0] not in known:
                    raise ValueError(f"configuration {c.config_id} refers to unknown object {row[0]}")
        return self


class LoopScenarioFile(BaseModel):
    """Scripted multi-step scenario for the iterative loop"""
    name: str
    instruction: str
    scene: SceneFile
    planner: Literal["scripted", "replay"] = "scripted"
    programs: List[str]
    disturbances: List[Disturbance] = Field(default_factory=list)
    max_iterations: Optional[int] = Field(default=None, ge=1)
