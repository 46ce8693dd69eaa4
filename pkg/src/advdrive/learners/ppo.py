"""PPO with the clipped surrogate objective over a categorical policy."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from advdrive.errors import ConfigError, NumericError, UsageError
from advdrive.learners.buffers import RolloutBuffer, normalize_advantages
from advdrive.nn import AdamState, Mlp, adam_step, clip_grad_norm


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    epochs: int = 10
    minibatch_size: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    rollout_length: int = 2048
    max_grad_norm: float = 0.5
    hidden_sizes: tuple = (64, 64)

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ConfigError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.epochs < 1 or self.minibatch_size < 1 or self.rollout_length < 1:
            raise ConfigError("epochs, minibatch_size and rollout_length must be >= 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass(frozen=True)
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    mean_ratio: float
    clip_fraction: float
    approx_kl: float


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical(logits):
    """Probabilities, log-probabilities and entropy of a batch (or single row) of logits."""
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    p = np.exp(logp)
    return p, logp, -(p * logp).sum(axis=-1)


def sample_discrete(policy: Mlp, obs, rng, deterministic: bool = False):
    """Draw an action from the softmax over the policy logits.

    Returns ``(action, log_prob, entropy)``; ``deterministic`` takes the argmax.
    """
    logits = policy(np.ravel(obs))
    p, logp, entropy = categorical(logits)
    if deterministic:
        action = int(np.argmax(logits))
    else:
        action = int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), p.size - 1))
    return action, float(logp[action]), float(entropy)


def ppo_clip_objective(ratio, advantage, eps):
    """Per-sample clipped surrogate (to be maximised)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


def ppo_policy_loss(logits, actions, old_logp, adv, eps, entropy_coef):
    """Negated mean clipped surrogate minus the entropy bonus, with its gradient w.r.t. the logits.

    Returns ``(loss, d loss / d logits, log_ratio, entropy)`` for a batch.
    """
    b = logits.shape[0]
    p, logp, ent = categorical(logits)
    logp_a = logp[np.arange(b), actions]
    log_ratio = logp_a - old_logp
    ratio = np.exp(log_ratio)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    loss = -np.minimum(surr1, surr2).mean() - entropy_coef * ent.mean()
    # the clipped branch is constant in the logits, so only samples where the unclipped term is the min carry gradient
    coef = np.where(surr1 <= surr2, ratio * adv, 0.0)
    onehot = np.zeros_like(p)
    onehot[np.arange(b), actions] = 1.0
    g_logits = (-coef[:, None] * (onehot - p) + entropy_coef * p * (logp + ent[:, None])) / b
    return float(loss), g_logits, log_ratio, ent


def ppo_update(policy: Mlp, value_net: Mlp, buffer: RolloutBuffer, config: PpoConfig,
               policy_opt: AdamState, value_opt: AdamState, rng) -> UpdateStats:
    """Several epochs of minibatch ascent on the clipped surrogate plus entropy, and value regression."""
    if buffer.advantages is None:
        raise UsageError("compute advantages before updating")
    n = buffer.size
    obs = buffer.obs[:n]
    actions = buffer.actions[:n]
    old_logp = buffer.log_probs[:n]
    adv_all = normalize_advantages(buffer.advantages)
    returns = buffer.returns
    eps = config.clip_eps
    mb = min(config.minibatch_size, n)

    sums = np.zeros(6)
    count = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            b = idx.size
            s, a, adv = obs[idx], actions[idx], adv_all[idx]

            logits, pcache = policy.forward(s)
            policy_loss, g_logits, log_ratio, ent = ppo_policy_loss(logits, a, old_logp[idx], adv, eps,
                                                                config.entropy_coef)

            values, vcache = value_net.forward(s)
            values = values[:, 0]
            err = values - returns[idx]
            value_loss = config.value_coef * float(np.mean(err * err))
            if not (math.isfinite(policy_loss) and math.isfinite(value_loss)):
                raise NumericError(f"non-finite PPO loss (policy {policy_loss}, value {value_loss})")

            pg = policy.backward(pcache, g_logits)
            clip_grad_norm(pg, config.max_grad_norm)
            vg = value_net.backward(vcache, (2.0 * config.value_coef / b) * err[:, None])
            clip_grad_norm(vg, config.max_grad_norm)
            adam_step(policy, pg, policy_opt)
            adam_step(value_net, vg, value_opt)

            ratio = np.exp(log_ratio)
            sums += (policy_loss, value_loss, ent.mean(), ratio.mean(),
                     np.mean(np.abs(ratio - 1.0) > eps), np.mean((ratio - 1.0) - log_ratio))
            count += 1
    return UpdateStats(*(float(x) for x in sums / max(count, 1)))


class PpoLearner:
    """Policy and value networks plus their optimiser state."""

    def __init__(self, obs_size: int, n_actions: int, config: PpoConfig, rng, policy: Mlp | None = None,
                 value_net: Mlp | None = None):
        self.config = config
        self.rng = rng
        sizes = (obs_size, *config.hidden_sizes)
        self.policy = policy if policy is not None else Mlp.initialize((*sizes, n_actions), rng, output_gain=0.01)
        self.value = value_net if value_net is not None else Mlp.initialize((*sizes, 1), rng, output_gain=1.0)
        self.policy_opt = AdamState.for_net(self.policy, lr=config.lr)
        self.value_opt = AdamState.for_net(self.value, lr=config.lr)

    def act(self, obs, deterministic=False):
        action, logp, _ = sample_discrete(self.policy, obs, self.rng, deterministic)
        return action, logp, float(self.value(np.ravel(obs))[0])

    def value_of(self, obs) -> float:
        return float(self.value(np.ravel(obs))[0])

    def update(self, buffer: RolloutBuffer) -> UpdateStats:
        return ppo_update(self.policy, self.value, buffer, self.config, self.policy_opt, self.value_opt, self.rng)
