"""
Configuration module for iker-desk
Centralized settings for simulator, domain randomization, reward, PPO, planner and loop
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .models.run_models import Disturbance

logger = logging.getLogger(__name__)

Range = Tuple[float, float]

PROJECT_ROOT = Path(__file__).parent.parent.parent
FIXTURES_DIR = PROJECT_ROOT / "fixtures"
DEFAULT_CONFIG_PATH = PROJECT_ROOT / "configs" / "default.json"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SimulatorConfig(_Section):
    """Quasi-static tabletop simulator settings"""

    max_translation_step: float = Field(default=0.02, gt=0)  # m per control step
    max_rotation_step: float = Field(default=0.1, gt=0)  # rad per control step
    gripper_radius: float = Field(default=0.015, gt=0)
    gripper_home: Tuple[float, float, float] = (0.0, -0.30, 0.15)
    push_rotation_gain: float = 1.0
    force_threshold: float = 0.5
    penetration_tolerance: float = Field(default=1e-4, gt=0)  # m left after push resolution
    drop_height_tolerance: float = 0.01
    placement_attempts: int = Field(default=20, ge=1)
    min_object_clearance: float = Field(default=0.0, ge=0)  # m between objects at reset
    reject_initial_overlap: bool = True  # off for scenes carried over from a previous step

    # Deployment proxy ("real world" stand-in)
    proxy_shift_fraction: float = 0.25
    proxy_position_noise: float = 0.003
    proxy_orientation_noise: float = 0.02


class DomainRandomizationConfig(_Section):
    """Ranges for every randomized episode parameter"""

    enabled: bool = True
    scale: Range = (0.8, 1.2)
    mass: Range = (0.3, 2.0)
    friction: Range = (0.3, 1.8)
    restitution: Range = (0.0, 1.0)
    compliance: Range = (0.0, 1.0)
    com_offset: Range = (-0.05, 0.05)
    initial_position: Range = (-0.02, 0.02)
    initial_orientation: Range = (-0.05, 0.05)
    grasp_position: Range = (-0.01, 0.01)
    grasp_orientation: Range = (-0.2, 0.2)

    @field_validator(
        "scale", "mass", "friction", "restitution", "compliance", "com_offset",
        "initial_position", "initial_orientation", "grasp_position", "grasp_orientation",
    )
    @classmethod
    def validate_range(cls, v):
        lo, hi = v
        if lo > hi:
            raise ValueError(f"range lower bound {lo} exceeds upper bound {hi}")
        return v

    def range_names(self) -> List[str]:
        return [name for name in type(self).model_fields if name != "enabled"]


class RewardConfig(_Section):
    """Weights and thresholds of the keypoint reward"""

    alpha_dist: float = 0.1
    alpha_dir: float = 0.5
    alpha_align: float = 1.0
    alpha_bonus: float = Field(default=10.0, gt=0)
    alpha_penalty: float = 1.0
    hold_steps: int = Field(default=10, ge=1)
    success_threshold: float = Field(default=0.05, gt=0)  # m, "within 5 cm"
    move_threshold: float = 0.02


class PPOConfig(_Section):
    """Clipped-surrogate policy optimization settings"""

    num_envs: int = Field(default=128, ge=1)
    rollout_length: int = Field(default=64, ge=1)
    epochs_per_update: int = Field(default=5, ge=1)
    minibatch_size: int = Field(default=2048, ge=1)
    clip_epsilon: float = Field(default=0.2, gt=0, lt=1)
    gamma: float = Field(default=0.99, gt=0, le=1)
    gae_lambda: float = Field(default=0.95, ge=0, le=1)
    learning_rate: float = Field(default=3e-4, gt=0)
    lr_decay: bool = True
    value_coef: float = 0.5
    entropy_coef: float = 0.003
    max_grad_norm: float = 1.0
    max_updates: int = Field(default=500, ge=1)
    target_success_early_stop: float = 0.95
    eval_interval: int = Field(default=10, ge=1)
    episode_horizon: int = Field(default=150, ge=1)
    hidden_sizes: Tuple[int, ...] = (256, 128, 64)
    init_log_std: float = -0.5
    keypoints_per_policy: int = 4
    normalize_observations: bool = True


class PlannerConfig(_Section):
    """Planner backend selection and live-client settings"""

    backend: Literal["scripted", "replay", "live"] = "scripted"
    replay_path: Optional[str] = None
    max_attempts: int = Field(default=3, ge=1)
    completion_pointer: str = "/choices/0/message/content"
    request_timeout: float = 60.0
    prompt_prefix_path: Optional[str] = None
    reveal_color_tags: bool = True


class LoopConfig(_Section):
    """Iterative plan-train-deploy loop settings"""

    max_iterations: int = Field(default=6, ge=1)
    deployment_mode: Literal["train_distribution", "deployment_proxy"] = "deployment_proxy"
    episode_horizon: int = Field(default=300, ge=1)
    disturbances: List[Disturbance] = Field(default_factory=list)


class HarnessConfig(_Section):
    """Benchmark protocol settings"""

    proxy_trials_per_config: int = Field(default=1, ge=1)
    train_trials_per_config: Optional[int] = None  # defaults to ppo.num_envs


class IkerSettings(BaseSettings):
    """Configuration settings for iker-desk"""

    debug: bool = False
    log_level: str = "INFO"
    output_dir: str = "runs"

    simulator: SimulatorConfig = Field(default_factory=SimulatorConfig)
    dr: DomainRandomizationConfig = Field(default_factory=DomainRandomizationConfig)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    ppo: PPOConfig = Field(default_factory=PPOConfig)
    planner: PlannerConfig = Field(default_factory=PlannerConfig)
    loop: LoopConfig = Field(default_factory=LoopConfig)
    harness: HarnessConfig = Field(default_factory=HarnessConfig)

    # Live planner credentials (un-prefixed environment variables)
    planner_api_url: Optional[str] = Field(default=None, validation_alias="PLANNER_API_URL")
    planner_api_key: Optional[str] = Field(default=None, validation_alias="PLANNER_API_KEY")
    planner_model: str = Field(default="gpt-4o", validation_alias="PLANNER_MODEL")

    model_config = SettingsConfigDict(
        env_prefix="IKER_",
        env_file=".env",
        env_nested_delimiter="__",
        extra="ignore",
    )

    @model_validator(mode="after")
    def check_move_threshold(self):
        if self.reward.move_threshold <= 0:
            self.reward.move_threshold = self.simulator.max_translation_step
        return self

    def sections(self) -> Dict[str, Any]:
        """Serializable view of the tunable sections (credentials excluded)"""
        return self.model_dump(
            mode="json",
            include={"simulator", "dr", "reward", "ppo", "planner", "loop", "harness"},
        )


def load_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> IkerSettings:
    """
    Load settings from a JSON or YAML file overlaid on the defaults

    Args:
        path: Config file path; None uses only defaults and environment
        overrides: Section dictionaries that take precedence over the file

    Returns:
        Validated settings
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
        logger.debug(f"Loaded configuration file {path}")
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return IkerSettings(**data)


def config_hash(settings: IkerSettings) -> str:
    """Short stable hash of the tunable configuration"""
    canonical = json.dumps(settings.sections(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


# Global configuration instance
config = IkerSettings()

# Benchmark task presets
TASK_PRESETS: Dict[str, Dict[str, Any]] = {
    'place': {
        'name': 'Shoe Place',
        'description': 'Pick a shoe from the floor area and place it on the raised rack',
        'directive': 'grasp',
        'instruction': 'Put the shoe on the rack.',
        'category': 'prehensile',
    },
    'push_pair': {
        'name': 'Shoe Push',
        'description': 'Push a shoe next to the other shoe (0.05 m gap, parallel) to form a pair',
        'directive': 'push',
        'instruction': 'Push the left shoe so it forms a pair with the right shoe.',
        'category': 'non_prehensile',
    },
    'push_edge': {
        'name': 'Book Push',
        'description': 'Push a book into the 0.05 m band at the table edge',
        'directive': 'push',
        'instruction': 'Push the book to the edge of the table.',
        'category': 'non_prehensile',
    },
    'reorient': {
        'name': 'Book Reorient',
        'description': 'Push a book on the shelf so that it turns by 90 degrees in place',
        'directive': 'push',
        'instruction': 'Rotate the book on the shelf by a quarter turn.',
        'category': 'non_prehensile',
    },
}

# Benchmark conditions (reward source x target representation)
BENCH_CONDITIONS: Dict[str, Dict[str, Any]] = {
    'annotated': {'source': 'scripted', 'representation': 'keypoint'},
    'automatic': {'source': 'planner', 'representation': 'keypoint'},
    'annotated_pose': {'source': 'scripted', 'representation': 'pose'},
    'pose_baseline': {'source': 'planner', 'representation': 'pose'},
}
