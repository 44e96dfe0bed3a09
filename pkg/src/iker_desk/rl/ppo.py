"""
Proximal policy optimization
Rollout collection, generalized advantage estimation and clipped-surrogate updates with analytic gradients
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..config import PPOConfig
from .optimizer import Adam, clip_grad_norm
from .policy import Policy, gaussian_entropy, gaussian_log_prob, squash_correction

logger = logging.getLogger(__name__)


class TrainingDivergenceError(RuntimeError):
    """Loss or gradients became non-finite"""


@dataclass
class TrajectoryBatch:
    """Per (timestep, env) arrays; observations are stored normalized as the policy saw them"""
    observations: np.ndarray  # (T, N, D)
    actions: np.ndarray  # (T, N, 6) pre-squash samples
    log_probs: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T, N)
    values: np.ndarray  # (T, N)
    dones: np.ndarray  # (T, N)
    last_values: np.ndarray  # (N,)
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.rewards.size


def collect_rollouts(envs, policy: Policy, rollout_length: int, rng: np.random.Generator,
                     obs: Optional[np.ndarray] = None, update_normalizer: bool = True):
    """
    Step every environment rollout_length times with sampled actions

    Args:
        envs: TrainingEnvs batch
        policy: Acting policy (its normalizer stays fixed during the rollout)
        rollout_length: Steps per environment
        rng: Action sampling generator
        obs: Current raw observations; None reads them from envs
        update_normalizer: Fold the raw observations into the normalizer afterwards

    Returns:
        (batch, raw observations after the last step)
    """
    obs = envs.observe() if obs is None else obs
    n = obs.shape[0]
    raw, observations, actions, log_probs, rewards, values, dones = [], [], [], [], [], [], []
    for _ in range(rollout_length):
        raw.append(obs)
        observations.append(policy.prepare(obs))
        action, u, log_prob, value = policy.act(obs, rng)
        obs, reward, done, _ = envs.step(action)
        actions.append(u)
        log_probs.append(log_prob)
        rewards.append(reward)
        values.append(value)
        dones.append(done.astype(np.float64))
    _, _, _, last_values = policy.act(obs, deterministic=True)
    if update_normalizer:
        policy.normalizer.update(np.concatenate(raw).reshape(-1, obs.shape[1]))
    batch = TrajectoryBatch(np.stack(observations), np.stack(actions), np.stack(log_probs), np.stack(rewards),
                            np.stack(values), np.stack(dones), np.asarray(last_values).reshape(n))
    return batch, obs


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_values: np.ndarray,
                gamma: float = 0.99, lam: float = 0.95):
    """
    Generalized advantage estimates, truncated where an episode ended

    Args:
        rewards, values, dones: (T, N)
        last_values: (N,) value estimates after the final step

    Returns:
        (advantages, returns) with returns = advantages + values
    """
    steps = rewards.shape[0]
    advantages = np.zeros_like(rewards, dtype=np.float64)
    running = np.zeros_like(last_values, dtype=np.float64)
    next_values = last_values
    for t in reversed(range(steps)):
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * alive - values[t]
        running = delta + gamma * lam * alive * running
        advantages[t] = running
        next_values = values[t]
    return advantages, advantages + values


def surrogate_loss(ratio: np.ndarray, advantages: np.ndarray, clip_epsilon: float) -> float:
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return float(-np.mean(np.minimum(ratio * advantages, clipped * advantages)))


def _flatten(batch: TrajectoryBatch) -> Dict[str, np.ndarray]:
    d = batch.observations.shape[-1]
    return {
        "obs": batch.observations.reshape(-1, d),
        "u": batch.actions.reshape(-1, batch.actions.shape[-1]),
        "log_prob": batch.log_probs.reshape(-1),
        "advantage": batch.advantages.reshape(-1),
        "return": batch.returns.reshape(-1),
    }


def loss_and_gradients(policy: Policy, obs: np.ndarray, u: np.ndarray, old_log_prob: np.ndarray,
                       advantages: np.ndarray, returns: np.ndarray, config: PPOConfig):
    """Clipped-surrogate loss on normalized observations and its parameter gradients"""
    network = policy.network
    mean, log_std, value, cache = network.forward_with_cache(obs)
    b = obs.shape[0]
    var = np.exp(2.0 * log_std)
    log_prob = gaussian_log_prob(u, mean, log_std) - squash_correction(u)
    ratio = np.exp(log_prob - old_log_prob)
    clipped = np.clip(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon)
    unclipped_branch = ratio * advantages <= clipped * advantages

    policy_loss = float(-np.mean(np.minimum(ratio * advantages, clipped * advantages)))
    value_loss = float(np.mean((value - returns) ** 2))
    entropy = gaussian_entropy(log_std)
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

    d_log_prob = np.where(unclipped_branch, -advantages / b, 0.0) * ratio
    diff = u - mean
    d_mean = d_log_prob[:, None] * diff / var
    d_log_std = np.sum(d_log_prob[:, None] * (diff * diff / var - 1.0), axis=0) - config.entropy_coef
    d_value = config.value_coef * 2.0 * (value - returns) / b
    grads = network.backward(cache, d_mean, d_value, d_log_std)

    metrics = {
        "loss": float(loss),
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "kl_estimate": float(np.mean((ratio - 1.0) - np.log(ratio))),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip_epsilon)),
    }
    return loss, grads, metrics


def ppo_update(policy: Policy, optimizer: Adam, batch: TrajectoryBatch, config: PPOConfig, lr: float,
               rng: np.random.Generator, normalize_advantages: bool = True) -> Dict[str, float]:
    """
    Epochs of minibatch clipped-surrogate updates

    Returns:
        Mean metrics over all minibatches (policy_loss, value_loss, entropy, kl_estimate,
        clip_fraction, grad_norm)

    Raises:
        TrainingDivergenceError: on a non-finite loss or gradient
    """
    if batch.advantages is None:
        raise ValueError("batch has no advantages; run compute_gae first")
    data = _flatten(batch)
    advantages = data["advantage"]
    if normalize_advantages and advantages.size > 1:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    size = advantages.size
    minibatch = min(config.minibatch_size, size)
    totals: Dict[str, float] = {}
    count = 0
    for _ in range(config.epochs_per_update):
        order = rng.permutation(size)
        for start in range(0, size, minibatch):
            idx = order[start:start + minibatch]
            loss, grads, metrics = loss_and_gradients(
                policy, data["obs"][idx], data["u"][idx], data["log_prob"][idx], advantages[idx],
                data["return"][idx], config)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                logger.error(f"Non-finite loss {loss} during update")
                raise TrainingDivergenceError("divergence")
            grads, norm = clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(policy.network.params, grads, lr)
            metrics["grad_norm"] = norm
            for key, value in metrics.items():
                totals[key] = totals.get(key, 0.0) + value
            count += 1
    return {key: value / count for key, value in totals.items()}
