"""TD3: clipped double-Q targets, delayed actor/target updates, target policy smoothing.

The actor emits a tanh-squashed vector with one entry per meta-action; the
environment executes its argmax while the critics see the continuous vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from advdrive.errors import ConfigError, NumericError, UsageError
from advdrive.learners.buffers import ReplayBuffer
from advdrive.nn import AdamState, Mlp, adam_step, soft_update


@dataclass(frozen=True)
class Td3Config:
    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    exploration_noise: float = 0.1
    batch_size: int = 256
    warmup_steps: int = 1000
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    buffer_size: int = 100_000
    hidden_sizes: tuple = (64, 64)

    def __post_init__(self):
        if self.policy_delay < 1:
            raise ConfigError(f"policy_delay must be >= 1, got {self.policy_delay}")
        for name in ("target_noise", "noise_clip", "tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.batch_size < 1 or self.buffer_size < 1:
            raise ConfigError("batch_size and buffer_size must be >= 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass(frozen=True)
class Td3Stats:
    critic_loss: float
    actor_loss: float | None
    mean_q: float
    actor_updated: bool


def td3_target(r, done, q1_target, q2_target, gamma):
    return r + gamma * (1.0 - done) * np.minimum(q1_target, q2_target)


def smooth_target_action(u, sigma, c, rng):
    u = np.asarray(u, dtype=np.float64)
    if sigma == 0:
        return np.clip(u, -1.0, 1.0)
    noise = np.clip(rng.normal(0.0, sigma, size=u.shape), -c, c)
    return np.clip(u + noise, -1.0, 1.0)


def project_discrete_action(u) -> int:
    """Index of the largest component; ``np.argmax`` already prefers the lowest index on ties."""
    u = np.asarray(u)
    if u.ndim != 1:
        raise ValueError(f"expected a 1-D action vector, got shape {u.shape}")
    return int(np.argmax(u))


class Td3Learner:
    def __init__(self, obs_size: int, action_size: int, config: Td3Config, rng):
        self.config = config
        self.rng = rng
        self.obs_size = obs_size
        self.action_size = action_size
        hidden = config.hidden_sizes
        self.actor = Mlp.initialize((obs_size, *hidden, action_size), rng, output_gain=0.01)
        self.q1 = Mlp.initialize((obs_size + action_size, *hidden, 1), rng)
        self.q2 = Mlp.initialize((obs_size + action_size, *hidden, 1), rng)
        self.actor_target = self.actor.copy()
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.actor_opt = AdamState.for_net(self.actor, lr=config.actor_lr)
        self.q1_opt = AdamState.for_net(self.q1, lr=config.critic_lr)
        self.q2_opt = AdamState.for_net(self.q2, lr=config.critic_lr)

    def networks(self) -> dict[str, Mlp]:
        return {"actor": self.actor, "actor_target": self.actor_target, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def policy(self, obs) -> np.ndarray:
        return np.tanh(self.actor(np.ravel(obs)))

    def explore(self, obs) -> np.ndarray:
        u = self.policy(obs)
        noise = self.rng.normal(0.0, self.config.exploration_noise, size=u.shape)
        return np.clip(u + noise, -1.0, 1.0)

    def random_action(self) -> np.ndarray:
        return self.rng.uniform(-1.0, 1.0, size=self.action_size)


def td3_update(learner: Td3Learner, buffer: ReplayBuffer, config: Td3Config, global_step: int, rng) -> Td3Stats:
    """One critic update; the actor and all targets move only when ``global_step % policy_delay == 0``."""
    if len(buffer) < config.batch_size:
        raise UsageError(f"replay buffer holds {len(buffer)} < batch_size {config.batch_size}")
    s, u, r, s2, d = buffer.sample(config.batch_size, rng)
    b = s.shape[0]

    u2 = smooth_target_action(np.tanh(learner.actor_target(s2)), config.target_noise, config.noise_clip, rng)
    x2 = np.concatenate([s2, u2], axis=1)
    y = td3_target(r, d, learner.q1_target(x2)[:, 0], learner.q2_target(x2)[:, 0], config.gamma)

    x = np.concatenate([s, u], axis=1)
    critic_loss = 0.0
    mean_q = 0.0
    for q, opt in ((learner.q1, learner.q1_opt), (learner.q2, learner.q2_opt)):
        pred, cache = q.forward(x)
        err = pred[:, 0] - y
        loss = float(np.mean(err * err))
        if not math.isfinite(loss):
            raise NumericError(f"non-finite critic loss {loss}")
        adam_step(q, q.backward(cache, (2.0 / b) * err[:, None]), opt)
        critic_loss += loss
        mean_q += float(pred.mean())

    actor_loss = None
    updated = global_step % config.policy_delay == 0
    if updated:
        raw, acache = learner.actor.forward(s)
        act = np.tanh(raw)
        qv, qcache = learner.q1.forward(np.concatenate([s, act], axis=1))
        actor_loss = -float(qv.mean())
        if not math.isfinite(actor_loss):
            raise NumericError(f"non-finite actor loss {actor_loss}")
        g_in = learner.q1.backward(qcache, np.full((b, 1), -1.0 / b)).input[:, learner.obs_size:]
        adam_step(learner.actor, learner.actor.backward(acache, g_in * (1.0 - act * act)), learner.actor_opt)
        soft_update(learner.actor_target, learner.actor, config.tau)
        soft_update(learner.q1_target, learner.q1, config.tau)
        soft_update(learner.q2_target, learner.q2, config.tau)
    return Td3Stats(critic_loss / 2.0, actor_loss, mean_q / 2.0, updated)
