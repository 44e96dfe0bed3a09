"""
Per-task policy training loop
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..config import DomainRandomizationConfig, PPOConfig, SimulatorConfig
from ..sim.simulator import TabletopSimulator
from .env import TaskDefinition, TrainingEnvs, evaluate_policy
from .network import ActorCritic
from .optimizer import Adam, RunningNormalizer, linear_lr
from .policy import Policy
from .ppo import collect_rollouts, compute_gae, ppo_update

logger = logging.getLogger(__name__)

ACTION_STREAM = 2
EVALUATION_STREAM = 3


@dataclass
class TrainingResult:
    policy: Policy
    history: List[Dict[str, float]] = field(default_factory=list)
    best_success: float = 0.0
    updates: int = 0
    stopped_early: bool = False
    wall_time: float = 0.0


def build_policy(obs_dim: int, ppo: PPOConfig, sim_config: SimulatorConfig, seed: int) -> Policy:
    network = ActorCritic(obs_dim, 6, ppo.hidden_sizes, ppo.init_log_std, seed=seed)
    normalizer = RunningNormalizer(obs_dim)
    normalizer.frozen = not ppo.normalize_observations
    return Policy(network, normalizer, sim_config.max_translation_step, sim_config.max_rotation_step)


def train_task(task: TaskDefinition, dr: DomainRandomizationConfig, ppo: Optional[PPOConfig] = None,
               sim_config: Optional[SimulatorConfig] = None, seed: int = 0) -> TrainingResult:
    """
    Train one policy for one task with PPO

    Collects rollouts from ppo.num_envs randomized environments, updates the policy, and every
    eval_interval updates measures the deterministic success rate over the training distribution.
    Training stops at max_updates or once that rate reaches target_success_early_stop.

    Args:
        task: Labeled scene, reward targets and directive
        dr: Domain randomization ranges
        ppo: Optimization settings
        sim_config: Simulator settings
        seed: Seeds environments, initialization, sampling and evaluation

    Returns:
        Best evaluated policy (frozen) and the full metric history

    Raises:
        TrainingDivergenceError: on a non-finite update
    """
    ppo = ppo or PPOConfig()
    sim_config = sim_config or SimulatorConfig()
    started = time.time()

    simulator = TabletopSimulator(task.scene, sim_config)
    envs = TrainingEnvs(task, simulator, dr, ppo.num_envs, ppo.episode_horizon, ppo.keypoints_per_policy, seed)
    policy = build_policy(envs.obs_dim, ppo, sim_config, seed)
    optimizer = Adam(policy.network.params)
    rng = np.random.default_rng([seed, ACTION_STREAM])

    result = TrainingResult(policy.frozen(), best_success=-1.0)
    obs = envs.observe()
    logger.info(f"Training {task.name}: {ppo.num_envs} envs x {ppo.rollout_length} steps, "
                f"up to {ppo.max_updates} updates")

    for update in range(ppo.max_updates):
        lr = linear_lr(ppo.learning_rate, update, ppo.max_updates, ppo.lr_decay)
        batch, obs = collect_rollouts(envs, policy, ppo.rollout_length, rng, obs)
        batch.advantages, batch.returns = compute_gae(batch.rewards, batch.values, batch.dones, batch.last_values,
                                                      ppo.gamma, ppo.gae_lambda)
        metrics = ppo_update(policy, optimizer, batch, ppo, lr, rng)
        metrics.update(update=update + 1, lr=lr, mean_reward=float(batch.rewards.mean()))
        finished = envs.drain_completed()
        if finished is not None:
            metrics.update(episodes=int(finished.success.size), episode_success=finished.success_rate)
        result.updates = update + 1

        if (update + 1) % ppo.eval_interval == 0 or update + 1 == ppo.max_updates:
            candidate = policy.frozen()
            outcome = evaluate_policy(candidate, task, simulator, dr, [seed, EVALUATION_STREAM], ppo.num_envs,
                                      "train", ppo.episode_horizon, ppo.keypoints_per_policy)
            success = outcome.success_rate
            metrics["eval_success"] = success
            logger.info(f"{task.name} update {update + 1}: success {success:.3f}, reward "
                        f"{metrics['mean_reward']:.3f}, kl {metrics['kl_estimate']:.4f}, "
                        f"clip {metrics['clip_fraction']:.3f}")
            if success > result.best_success:
                result.policy, result.best_success = candidate, success
            result.history.append(metrics)
            if success >= ppo.target_success_early_stop:
                result.stopped_early = True
                break
        else:
            result.history.append(metrics)

    result.best_success = max(result.best_success, 0.0)
    result.wall_time = time.time() - started
    logger.info(f"Finished {task.name} after {result.updates} updates, best success {result.best_success:.3f}")
    return result
