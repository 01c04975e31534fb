## Policy heads: categorical logits for discrete actions, diagonal Gaussian for continuous ones.

import math
from typing import Optional, Tuple

import numpy as np

from config.config import Config
from qql.errors import ShapeError


## Softmax-over-logits policy for a finite action set
class CategoricalHead:

    discrete = True

    def __init__(self, n_actions: int):
        self.n_actions = n_actions
        self.output_dim = n_actions
        self.feature_dim = n_actions

    ## One-hot encoding of integer actions for Q-network inputs
    def encode(self, actions: np.ndarray) -> np.ndarray:
        idx = np.asarray(actions).reshape(-1).astype(np.int64)
        if np.any((idx < 0) | (idx >= self.n_actions)):
            raise ShapeError(f"Action index outside [0, {self.n_actions})")
        return np.eye(self.n_actions, dtype=np.float64)[idx]

    @staticmethod
    def _log_softmax(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def log_prob(self, logits: np.ndarray, actions: np.ndarray, log_std: Optional[np.ndarray] = None) -> np.ndarray:
        idx = np.asarray(actions).reshape(-1).astype(np.int64)
        return self._log_softmax(logits)[np.arange(idx.size), idx]

    ## Gradients of sum(coef * log pi(a|s)) w.r.t. logits (no log-std for this head)
    def log_prob_grad(self, logits: np.ndarray, actions: np.ndarray, coef: np.ndarray,
                      log_std: Optional[np.ndarray] = None) -> Tuple[np.ndarray, None]:
        probs = np.exp(self._log_softmax(logits))
        return coef[:, None] * (self.encode(actions) - probs), None

    def sample(self, rng: np.random.Generator, logits: np.ndarray, log_std: Optional[np.ndarray] = None) -> np.ndarray:
        probs = np.exp(self._log_softmax(logits))
        cumulative = np.cumsum(probs, axis=1)
        u = rng.random(logits.shape[0])[:, None]
        return np.minimum((u > cumulative).sum(axis=1), self.n_actions - 1)

    def mode(self, logits: np.ndarray, log_std: Optional[np.ndarray] = None) -> np.ndarray:
        return np.argmax(logits, axis=1)


## Diagonal Gaussian with state-dependent mean and a learned state-independent log-std
class GaussianHead:

    discrete = False

    def __init__(self, action_dim: int, low: float = -1.0, high: float = 1.0):
        self.action_dim = action_dim
        self.output_dim = action_dim
        self.feature_dim = action_dim
        self.low = low
        self.high = high

    def encode(self, actions: np.ndarray) -> np.ndarray:
        a = np.asarray(actions, dtype=np.float64).reshape(-1, self.action_dim)
        return a

    @staticmethod
    def clamp_log_std(log_std: np.ndarray) -> np.ndarray:
        return np.clip(log_std, Config.LOG_STD_MIN, Config.LOG_STD_MAX)

    ## Unsquashed Gaussian log-density of the actions
    def log_prob(self, mean: np.ndarray, actions: np.ndarray, log_std: np.ndarray) -> np.ndarray:
        ls = self.clamp_log_std(log_std)
        z = (self.encode(actions) - mean) / np.exp(ls)
        return -0.5 * np.sum(z * z, axis=1) - np.sum(ls) - 0.5 * self.action_dim * math.log(2.0 * math.pi)

    ## Gradients of sum(coef * log pi(a|s)) w.r.t. the mean outputs and the raw log-std
    def log_prob_grad(self, mean: np.ndarray, actions: np.ndarray, coef: np.ndarray,
                      log_std: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ls = self.clamp_log_std(log_std)
        var = np.exp(2.0 * ls)
        diff = self.encode(actions) - mean
        grad_mean = coef[:, None] * diff / var
        grad_log_std = np.sum(coef[:, None] * (diff * diff / var - 1.0), axis=0)
        # clamped coordinates receive no gradient
        inside = (log_std > Config.LOG_STD_MIN) & (log_std < Config.LOG_STD_MAX)
        return grad_mean, grad_log_std * inside

    def sample(self, rng: np.random.Generator, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
        std = np.exp(self.clamp_log_std(log_std))
        noise = rng.standard_normal(mean.shape)
        return np.clip(mean + std * noise, self.low, self.high)

    def mode(self, mean: np.ndarray, log_std: Optional[np.ndarray] = None) -> np.ndarray:
        return np.clip(mean, self.low, self.high)
