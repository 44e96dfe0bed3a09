"""
Actor-critic policies trained with PPO in randomized environments
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .env import EpisodeOutcome, TaskDefinition, TrainingEnvs, build_observation, evaluate_policy, run_episodes
from .network import ActorCritic
from .policy import Policy
from .ppo import TrainingDivergenceError, TrajectoryBatch, collect_rollouts, compute_gae, ppo_update
from .trainer import TrainingResult, train_task
