"""
Adam optimizer, gradient clipping, learning-rate schedule and observation normalizer
"""

from typing import Dict, Tuple

import numpy as np

Params = Dict[str, np.ndarray]


class Adam:
    """Adaptive moment estimation with bias correction; updates parameter arrays in place"""

    def __init__(self, params: Params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params, lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: Params, max_norm: float) -> Tuple[Params, float]:
    """Scale all gradients so that their joint L2 norm is at most max_norm"""
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        grads = {name: g * scale for name, g in grads.items()}
    return grads, norm


def linear_lr(base_lr: float, update: int, total_updates: int, decay: bool = True) -> float:
    if not decay:
        return base_lr
    return base_lr * max(1.0 - update / float(total_updates), 0.0)


class RunningNormalizer:
    """Per-dimension running mean and variance (parallel Welford merge); frozen copies stop updating"""

    def __init__(self, dim: int, clip: float = 10.0, eps: float = 1e-8):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0
        self.clip = clip
        self.eps = eps
        self.frozen = False

    def update(self, batch: np.ndarray) -> None:
        if self.frozen:
            return
        batch = np.asarray(batch, dtype=np.float64).reshape(-1, self.mean.shape[0])
        n = batch.shape[0]
        if n == 0:
            return
        batch_mean = batch.mean(axis=0)
        batch_var = batch.var(axis=0)
        total = self.count + n
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * n / total
        m2 = self.var * self.count + batch_var * n + delta ** 2 * self.count * n / total
        self.var = m2 / total
        self.count = total

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return np.asarray(obs, dtype=np.float64)
        return np.clip((obs - self.mean) / np.sqrt(self.var + self.eps), -self.clip, self.clip)

    def frozen_copy(self) -> "RunningNormalizer":
        clone = RunningNormalizer(self.mean.shape[0], self.clip, self.eps)
        clone.mean, clone.var, clone.count = self.mean.copy(), self.var.copy(), self.count
        clone.frozen = True
        return clone

    def state_dict(self) -> Dict:
        return {"mean": self.mean, "var": self.var, "count": self.count, "clip": self.clip}
