"""Fixed-capacity replay ring with uniform minibatch sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    state: np.ndarray  # (b, S)
    next_state: np.ndarray  # (b, S)
    action: np.ndarray  # (b, D) executed joint ratios
    reward: np.ndarray  # (b,)
    shaping: np.ndarray  # (b,)
    obs: np.ndarray  # (b, 3, O) all agents' observations side by side
    next_obs: np.ndarray  # (b, 3, O)

    def __len__(self) -> int:
        return self.reward.shape[0]


class ReplayBuffer:
    """Stores only completed (converged) transitions; the oldest is overwritten when full."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, obs_dim: int, n_samples: int = 3):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.state = np.zeros((capacity, state_dim))
        self.next_state = np.zeros((capacity, state_dim))
        self.action = np.zeros((capacity, action_dim))
        self.reward = np.zeros(capacity)
        self.shaping = np.zeros(capacity)
        self.obs = np.zeros((capacity, n_samples, obs_dim))
        self.next_obs = np.zeros((capacity, n_samples, obs_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, next_state, action, reward, shaping, obs, next_obs, done: bool = True) -> bool:
        """Append one transition. Returns False (and stores nothing) when ``done`` is false."""
        if not done:
            return False
        k = self._next
        self.state[k] = state
        self.next_state[k] = next_state
        self.action[k] = action
        self.reward[k] = reward
        self.shaping[k] = shaping
        self.obs[k] = obs
        self.next_obs[k] = next_obs
        self.done[k] = True
        self._next = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return True

    def sample(self, rng: np.random.Generator, batch_size: int) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.take(idx)

    def take(self, idx) -> Batch:
        return Batch(self.state[idx], self.next_state[idx], self.action[idx], self.reward[idx],
                     self.shaping[idx], self.obs[idx], self.next_obs[idx])
