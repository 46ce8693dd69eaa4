from __future__ import annotations

import numpy as np

from advdrive.errors import ShapeError, UsageError


def compute_gae(rewards, values, dones, bootstrap_value, gamma, lam):
    """Generalized advantage estimates and returns for one contiguous rollout.

    ``dones[t]`` marks that step t ended its episode, so nothing is bootstrapped
    across it; ``bootstrap_value`` is the value of the state after the last
    step (pass 0 when that step was terminal).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not rewards.shape == values.shape == dones.shape or rewards.ndim != 1:
        raise ShapeError(f"rewards {rewards.shape}, values {values.shape}, dones {dones.shape} must be equal 1-D")
    n = rewards.shape[0]
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    return adv, adv + values


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size <= 1:
        return adv - adv.mean() if adv.size else adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


class RolloutBuffer:
    """Fixed-length on-policy storage for discrete-action PPO."""

    def __init__(self, capacity: int, obs_size: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.log_probs = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.advantages = None
        self.returns = None
        self.size = 0

    def add(self, obs, action, log_prob, reward, value, done):
        if self.size >= self.capacity:
            raise UsageError("rollout buffer is full")
        i = self.size
        self.obs[i] = np.ravel(obs)
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward
        self.values[i] = value
        self.dones[i] = done
        self.size += 1
        self.advantages = self.returns = None

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def compute_advantages(self, bootstrap_value, gamma, lam):
        n = self.size
        self.advantages, self.returns = compute_gae(
            self.rewards[:n], self.values[:n], self.dones[:n], bootstrap_value, gamma, lam
        )

    def reset(self):
        self.size = 0
        self.advantages = self.returns = None


class ReplayBuffer:
    """Ring buffer of (s, u, r, s', done) with uniform sampling; overwrites oldest first."""

    def __init__(self, capacity: int, obs_size: int, action_size: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size))
        self.actions = np.zeros((capacity, action_size))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_size))
        self.dones = np.zeros(capacity)
        self.insert_order = np.zeros(capacity, dtype=np.int64)
        self.ptr = 0
        self.size = 0
        self.count = 0

    def add(self, obs, action, reward, next_obs, done):
        i = self.ptr
        self.obs[i] = np.ravel(obs)
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = np.ravel(next_obs)
        self.dones[i] = done
        self.insert_order[i] = self.count
        self.count += 1
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self):
        return self.size

    def sample_indices(self, batch_size: int, rng) -> np.ndarray:
        if self.size == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng):
        idx = self.sample_indices(batch_size, rng)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx]
