"""
Actor-critic multilayer perceptron
Shared ELU trunk, Gaussian actor head with state-independent log-std, scalar critic head
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    """1 for x > 0, e^x otherwise (both sides equal 1 at 0)"""
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


class ActorCritic:
    """
    Fully connected actor-critic network in numpy

    Weights are stored (fan_in, fan_out) so a batch (B, D) maps through x @ W + b.

    Args:
        obs_dim: Observation size
        action_dim: Action size
        hidden_sizes: Trunk layer widths
        init_log_std: Initial log standard deviation of every action dimension
        head_scale: Initial weight scale of both heads; 0 gives zero mean and value everywhere
        seed: Initialization seed
    """

    def __init__(self, obs_dim: int, action_dim: int = 6, hidden_sizes: Sequence[int] = (256, 128, 64),
                 init_log_std: float = -0.5, head_scale: float = 0.01, seed: int = 0):
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        rng = np.random.default_rng(seed)

        self.params: Params = {}
        fan_in = self.obs_dim
        for i, width in enumerate(self.hidden_sizes):
            self.params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
            self.params[f"b{i}"] = np.zeros(width)
            fan_in = width
        self.params["actor_W"] = rng.normal(0.0, 1.0, size=(fan_in, self.action_dim)) * head_scale / np.sqrt(fan_in)
        self.params["actor_b"] = np.zeros(self.action_dim)
        self.params["critic_W"] = rng.normal(0.0, 1.0, size=(fan_in, 1)) * head_scale / np.sqrt(fan_in)
        self.params["critic_b"] = np.zeros(1)
        self.params["log_std"] = np.full(self.action_dim, float(init_log_std))

    # Introspection

    @property
    def architecture(self) -> Dict:
        return {"obs_dim": self.obs_dim, "action_dim": self.action_dim,
                "hidden_sizes": list(self.hidden_sizes), "activation": "elu"}

    def parameter_names(self) -> List[str]:
        return list(self.params)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @staticmethod
    def expected_parameter_count(obs_dim: int, action_dim: int, hidden_sizes: Sequence[int]) -> int:
        count, fan_in = 0, obs_dim
        for width in hidden_sizes:
            count += fan_in * width + width
            fan_in = width
        return count + fan_in * action_dim + action_dim + fan_in + 1 + action_dim

    def copy(self) -> "ActorCritic":
        clone = ActorCritic.__new__(ActorCritic)
        clone.obs_dim, clone.action_dim, clone.hidden_sizes = self.obs_dim, self.action_dim, self.hidden_sizes
        clone.params = {name: value.copy() for name, value in self.params.items()}
        return clone

    # Forward / backward

    def _check(self, obs: np.ndarray) -> Tuple[np.ndarray, bool]:
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 1
        batch = obs[None] if single else obs
        if batch.shape[-1] != self.obs_dim:
            raise ValueError(f"observation dimension {batch.shape[-1]} does not match network input {self.obs_dim}")
        return batch, single

    def forward_with_cache(self, obs: np.ndarray):
        batch, _ = self._check(obs)
        activations = [batch]
        pre_activations = []
        h = batch
        for i in range(len(self.hidden_sizes)):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            h = elu(z)
            pre_activations.append(z)
            activations.append(h)
        mean = h @ self.params["actor_W"] + self.params["actor_b"]
        value = (h @ self.params["critic_W"] + self.params["critic_b"])[:, 0]
        return mean, self.params["log_std"].copy(), value, (activations, pre_activations)

    def forward(self, obs: np.ndarray):
        """
        Args:
            obs: (D,) or (B, D) observation(s)

        Returns:
            (action mean, log_std, value); unbatched input gives unbatched outputs
        """
        _, single = self._check(obs)
        mean, log_std, value, _ = self.forward_with_cache(obs)
        if single:
            return mean[0], log_std, float(value[0])
        return mean, log_std, value

    def backward(self, cache, d_mean: np.ndarray, d_value: np.ndarray,
                 d_log_std: Optional[np.ndarray] = None) -> Params:
        """Parameter gradients given loss gradients w.r.t. mean (B, A), value (B,) and log_std (A,)"""
        activations, pre_activations = cache
        h = activations[-1]
        d_value = np.asarray(d_value, dtype=np.float64).reshape(-1, 1)
        grads: Params = {
            "actor_W": h.T @ d_mean,
            "actor_b": d_mean.sum(axis=0),
            "critic_W": h.T @ d_value,
            "critic_b": d_value.sum(axis=0),
            "log_std": np.zeros(self.action_dim) if d_log_std is None else np.asarray(d_log_std, dtype=np.float64),
        }
        d_h = d_mean @ self.params["actor_W"].T + d_value @ self.params["critic_W"].T
        for i in reversed(range(len(self.hidden_sizes))):
            d_z = d_h * elu_grad(pre_activations[i])
            grads[f"W{i}"] = activations[i].T @ d_z
            grads[f"b{i}"] = d_z.sum(axis=0)
            d_h = d_z @ self.params[f"W{i}"].T
        return {name: grads[name] for name in self.params}
