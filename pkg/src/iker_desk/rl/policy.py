"""
Stochastic policy: network, observation normalizer and tanh-squashed action scaling
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .network import ActorCritic
from .optimizer import RunningNormalizer

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_log_prob(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log density summed over the last axis"""
    z = (u - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def squash_correction(u: np.ndarray) -> np.ndarray:
    """log |d tanh(u) / du| summed over the last axis"""
    return np.sum(np.log(1.0 - np.tanh(u) ** 2 + 1e-6), axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


@dataclass
class Policy:
    network: ActorCritic
    normalizer: RunningNormalizer
    max_translation: float = 0.02
    max_rotation: float = 0.1

    @property
    def action_scale(self) -> np.ndarray:
        return np.array([self.max_translation] * 3 + [self.max_rotation] * 3)

    def prepare(self, obs: np.ndarray) -> np.ndarray:
        return self.normalizer.normalize(np.asarray(obs, dtype=np.float64))

    def act(self, obs: np.ndarray, rng: Optional[np.random.Generator] = None,
            deterministic: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Sample (or take the mean of) the squashed Gaussian

        Args:
            obs: (B, D) raw observations
            rng: Sampling generator; required unless deterministic
            deterministic: Use the mean action

        Returns:
            (scaled action (B, 6), pre-squash sample u, log-prob of the squashed action, value)
        """
        normalized = self.prepare(obs)
        mean, log_std, value = self.network.forward(normalized)
        mean, value = np.atleast_2d(mean), np.atleast_1d(value)
        if deterministic:
            u = mean
        else:
            u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        log_prob = gaussian_log_prob(u, mean, log_std) - squash_correction(u)
        return np.tanh(u) * self.action_scale, u, log_prob, value

    def frozen(self) -> "Policy":
        return Policy(self.network.copy(), self.normalizer.frozen_copy(), self.max_translation, self.max_rotation)
