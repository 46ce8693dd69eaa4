"""The three training stages (ego PPO, adversary TD3, robust PPO) and the evaluation protocol."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import stats

from advdrive.behavior import DriverParams
from advdrive.env import EGO_ID, N_ACTIONS, OBS_SIZE, EpisodeConfig, HighwayEnv
from advdrive.errors import CompatibilityError, ConfigError, UsageError
from advdrive.harness.checkpoint import EGO_ROLES, Checkpoint
from advdrive.learners import (
    PpoConfig,
    PpoLearner,
    ReplayBuffer,
    RolloutBuffer,
    Td3Config,
    Td3Learner,
    project_discrete_action,
    td3_update,
)
from advdrive.nn import Mlp, params_digest

log = logging.getLogger(__name__)

STAGES = ("ego_ppo", "adversary_td3", "robust_ppo")


@dataclass(frozen=True)
class MetricsRow:
    env_steps: int
    episodes: int
    mean_return: float
    std_return: float
    mean_length: float
    ego_collision_rate: float
    adversary_collision_rate: float


@dataclass(frozen=True)
class EpisodeRow:
    episode: int
    seed: int
    env_steps: int
    episode_return: float
    length: int
    ego_collided: bool
    adversary_collided: bool


def aggregate(rows, env_steps: int) -> MetricsRow:
    returns = np.array([r.episode_return for r in rows], dtype=np.float64)
    lengths = np.array([r.length for r in rows], dtype=np.float64)
    return MetricsRow(
        env_steps=env_steps,
        episodes=len(rows),
        mean_return=float(returns.mean()),
        std_return=float(returns.std()),
        mean_length=float(lengths.mean()),
        ego_collision_rate=float(np.mean([r.ego_collided for r in rows])),
        adversary_collision_rate=float(np.mean([r.adversary_collided for r in rows])),
    )


@dataclass(frozen=True)
class StageSpec:
    stage: str
    env: EpisodeConfig = EpisodeConfig()
    driver: DriverParams = DriverParams()
    learner: PpoConfig | Td3Config | None = None
    total_steps: int = 200_000
    checkpoint_interval: int = 50_000
    log_interval: int = 5_000
    seed: int = 0
    ego: Checkpoint | None = None  # frozen opponent for adversary_td3; warm start for robust_ppo
    adversary: Checkpoint | None = None
    config_fingerprint: str = ""

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.stage == "adversary_td3" and self.ego is None:
            raise ConfigError("adversary_td3 requires a frozen ego checkpoint")
        if self.stage == "robust_ppo" and self.adversary is None:
            raise ConfigError("robust_ppo requires a frozen adversary checkpoint")
        if self.total_steps < 1 or self.checkpoint_interval < 1 or self.log_interval < 1:
            raise ConfigError("total_steps, checkpoint_interval and log_interval must be >= 1")
        if self.learner is None:
            object.__setattr__(self, "learner", Td3Config() if self.stage == "adversary_td3" else PpoConfig())
        want = Td3Config if self.stage == "adversary_td3" else PpoConfig
        if not isinstance(self.learner, want):
            raise ConfigError(f"{self.stage} needs a {want.__name__}")


@dataclass
class StageResult:
    checkpoint: Checkpoint
    curve: list[MetricsRow] = field(default_factory=list)
    episodes: list[EpisodeRow] = field(default_factory=list)
    checkpoint_steps: list[int] = field(default_factory=list)


class EgoPolicy:
    """Frozen categorical policy acting by argmax."""

    def __init__(self, ckpt: Checkpoint):
        if ckpt.role not in EGO_ROLES:
            raise CompatibilityError(f"checkpoint role {ckpt.role!r} cannot drive the ego")
        self.net = _network(ckpt, "policy", OBS_SIZE, N_ACTIONS)

    def __call__(self, obs) -> int:
        return int(np.argmax(self.net(np.ravel(obs))))


class AdversaryPolicy:
    """Frozen TD3 actor; executes the argmax of its noise-free action vector."""

    def __init__(self, ckpt: Checkpoint):
        if ckpt.role != "adversary_td3":
            raise CompatibilityError(f"checkpoint role {ckpt.role!r} cannot drive the adversary")
        self.net = _network(ckpt, "actor", OBS_SIZE, N_ACTIONS)

    def __call__(self, obs) -> int:
        return project_discrete_action(np.tanh(self.net(np.ravel(obs))))


def _network(ckpt: Checkpoint, name: str, n_in: int, n_out: int) -> Mlp:
    if name not in ckpt.networks:
        raise CompatibilityError(f"{ckpt.role} checkpoint has no {name!r} network")
    net = ckpt.networks[name]
    if net.layer_sizes[0] != n_in or net.layer_sizes[-1] != n_out:
        raise CompatibilityError(
            f"{ckpt.role} {name} maps {net.layer_sizes[0]} -> {net.layer_sizes[-1]}, environment needs {n_in} -> {n_out}"
        )
    return net


def _frozen_digest(spec: StageSpec) -> bytes:
    return b"".join(params_digest(n) for c in (spec.ego, spec.adversary) if c is not None
                    for _, n in sorted(c.networks.items()))


def _learner_config_dict(cfg) -> dict:
    out = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


class _Recorder:
    """Episode bookkeeping, interval logging and checkpoint scheduling shared by both learners."""

    def __init__(self, spec: StageSpec, on_checkpoint, make_checkpoint):
        self.spec = spec
        self.steps = 0
        self.episodes: list[EpisodeRow] = []
        self.curve: list[MetricsRow] = []
        self.window: list[EpisodeRow] = []
        self.checkpoint_steps: list[int] = []
        self.on_checkpoint = on_checkpoint
        self.make_checkpoint = make_checkpoint

    def episode(self, seed, ret, length, ego_hit, adv_hit):
        row = EpisodeRow(len(self.episodes), seed, self.steps + 1, float(ret), int(length), bool(ego_hit), bool(adv_hit))
        self.episodes.append(row)
        self.window.append(row)

    def tick(self):
        self.steps += 1
        if self.steps % self.spec.log_interval == 0 and self.window:
            row = aggregate(self.window, self.steps)
            self.curve.append(row)
            self.window = []
            log.info("%s step %d: %d episodes, mean return %.3f, mean length %.1f", self.spec.stage,
                     self.steps, row.episodes, row.mean_return, row.mean_length)
        if self.steps % self.spec.checkpoint_interval == 0 or self.steps == self.spec.total_steps:
            if not self.checkpoint_steps or self.checkpoint_steps[-1] != self.steps:
                self.checkpoint_steps.append(self.steps)
                if self.on_checkpoint is not None:
                    self.on_checkpoint(self.steps, self.make_checkpoint())


def run_stage(spec: StageSpec, on_checkpoint: Callable[[int, Checkpoint], None] | None = None) -> StageResult:
    """Train the stage's learner for ``spec.total_steps`` decision steps.

    ``on_checkpoint(env_steps, checkpoint)`` fires at every multiple of
    ``checkpoint_interval`` and at the final step.
    """
    before = _frozen_digest(spec)
    if spec.stage == "adversary_td3":
        result = _run_td3(spec, on_checkpoint)
    else:
        result = _run_ppo(spec, on_checkpoint)
    if _frozen_digest(spec) != before:
        raise UsageError("a frozen policy changed during training")
    return result


def _seed_streams(seed: int):
    env_ss, learner_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(env_ss), np.random.default_rng(learner_ss)


def _run_ppo(spec: StageSpec, on_checkpoint) -> StageResult:
    cfg: PpoConfig = spec.learner
    env_cfg = replace(spec.env, adversary_control="agent" if spec.stage == "robust_ppo" else "rule")
    env = HighwayEnv(env_cfg, spec.driver)
    env_rng, rng = _seed_streams(spec.seed)
    learner = PpoLearner(OBS_SIZE, N_ACTIONS, cfg, rng)
    if spec.stage == "robust_ppo" and spec.ego is not None:
        if spec.ego.role not in EGO_ROLES:
            raise CompatibilityError(f"checkpoint role {spec.ego.role!r} cannot initialise the ego")
        learner.policy.load_from(_network(spec.ego, "policy", OBS_SIZE, N_ACTIONS))
        learner.value.load_from(_network(spec.ego, "value", OBS_SIZE, 1))
    adversary = AdversaryPolicy(spec.adversary) if spec.stage == "robust_ppo" else None

    def make_checkpoint():
        return Checkpoint(
            role=spec.stage, networks={"policy": learner.policy.copy(), "value": learner.value.copy()},
            learner_config=_learner_config_dict(cfg), config_fingerprint=spec.config_fingerprint,
            rng_state=rng.bit_generator.state, env_steps=rec.steps,
        )

    rec = _Recorder(spec, on_checkpoint, make_checkpoint)
    buffer = RolloutBuffer(cfg.rollout_length, OBS_SIZE)
    ep_seed = int(env_rng.integers(2**31))
    obs = env.reset(seed=ep_seed)
    ep_ret, ep_len, adv_hit = 0.0, 0, False
    while rec.steps < spec.total_steps:
        action, logp, value = learner.act(obs[EGO_ID])
        actions = {EGO_ID: action}
        if adversary is not None:
            for a in env.agent_ids:
                if a != EGO_ID:
                    actions[a] = adversary(obs[a])
        out = env.step(actions)
        ego = out[EGO_ID]
        buffer.add(obs[EGO_ID], action, logp, ego.reward.total, value, ego.done)
        ep_ret += ego.reward.total
        ep_len += 1
        adv_hit = adv_hit or ego.info["adversary_collided"]
        obs = {a: step.observation for a, step in out.items()}
        if env.over:
            rec.episode(ep_seed, ep_ret, ep_len, ego.info["collided"], adv_hit)
            ep_seed = int(env_rng.integers(2**31))
            obs = env.reset(seed=ep_seed)
            ep_ret, ep_len, adv_hit = 0.0, 0, False
        if buffer.full or rec.steps + 1 == spec.total_steps:
            bootstrap = 0.0 if ego.done else learner.value_of(obs[EGO_ID])
            buffer.compute_advantages(bootstrap, cfg.gamma, cfg.gae_lambda)
            learner.update(buffer)
            buffer.reset()
        rec.tick()
    return StageResult(make_checkpoint(), rec.curve, rec.episodes, rec.checkpoint_steps)


def _run_td3(spec: StageSpec, on_checkpoint) -> StageResult:
    cfg: Td3Config = spec.learner
    env_cfg = replace(spec.env, adversary_control="agent")
    if env_cfg.adversary_count < 1:
        raise ConfigError("adversary_td3 needs adversary_count >= 1")
    env = HighwayEnv(env_cfg, spec.driver)
    env_rng, rng = _seed_streams(spec.seed)
    learner = Td3Learner(OBS_SIZE, N_ACTIONS, cfg, rng)
    ego_policy = EgoPolicy(spec.ego)
    adv_id = EGO_ID + 1  # the learning adversary; any further slots replay its policy

    def make_checkpoint():
        return Checkpoint(
            role="adversary_td3", networks={k: n.copy() for k, n in learner.networks().items()},
            learner_config=_learner_config_dict(cfg), config_fingerprint=spec.config_fingerprint,
            rng_state=rng.bit_generator.state, env_steps=rec.steps,
        )

    rec = _Recorder(spec, on_checkpoint, make_checkpoint)
    buffer = ReplayBuffer(cfg.buffer_size, OBS_SIZE, N_ACTIONS)
    updates = 0
    ep_seed = int(env_rng.integers(2**31))
    obs = env.reset(seed=ep_seed)
    ep_ret, ep_len = 0.0, 0
    while rec.steps < spec.total_steps:
        u = learner.random_action() if rec.steps < cfg.warmup_steps else learner.explore(obs[adv_id])
        actions = {EGO_ID: ego_policy(obs[EGO_ID]), adv_id: project_discrete_action(u)}
        for a in env.agent_ids:
            if a not in actions:
                actions[a] = project_discrete_action(learner.policy(obs[a]))
        out = env.step(actions)
        step = out[adv_id]
        buffer.add(obs[adv_id], u, step.reward.total, step.observation, step.done)
        ep_ret += step.reward.total
        ep_len += 1
        obs = {a: s.observation for a, s in out.items()}
        if step.done:
            rec.episode(ep_seed, ep_ret, ep_len, step.info["ego_collided"], step.info["collided"])
            ep_seed = int(env_rng.integers(2**31))
            obs = env.reset(seed=ep_seed)
            ep_ret, ep_len = 0.0, 0
        if rec.steps + 1 >= cfg.warmup_steps and len(buffer) >= cfg.batch_size:
            td3_update(learner, buffer, cfg, updates, rng)
            updates += 1
        rec.tick()
    return StageResult(make_checkpoint(), rec.curve, rec.episodes, rec.checkpoint_steps)


@dataclass
class EvalReport:
    episodes: int
    mean_return: float
    std_return: float
    mean_length: float
    std_length: float
    ego_collision_rate: float
    adversary_collision_rate: float
    rows: list[EpisodeRow]

    def as_metrics_row(self) -> MetricsRow:
        return MetricsRow(0, self.episodes, self.mean_return, self.std_return, self.mean_length,
                          self.ego_collision_rate, self.adversary_collision_rate)

    @classmethod
    def from_rows(cls, rows) -> "EvalReport":
        agg = aggregate(rows, 0)
        return cls(agg.episodes, agg.mean_return, agg.std_return, agg.mean_length,
                   float(np.std([r.length for r in rows])), agg.ego_collision_rate,
                   agg.adversary_collision_rate, list(rows))


def episode_seeds(seed: int, episodes: int) -> list[int]:
    return [int(x) for x in np.random.SeedSequence(seed).generate_state(episodes, dtype=np.uint32)]


def _play(env, ego_policy, adv_policy, seed):
    obs = env.reset(seed=seed)
    ret, length, adv_hit, ego_hit = 0.0, 0, False, False
    while not env.over:
        actions = {EGO_ID: ego_policy(obs[EGO_ID])}
        for a in env.agent_ids:
            if a != EGO_ID:
                actions[a] = adv_policy(obs[a])
        out = env.step(actions)
        ret += out[EGO_ID].reward.total
        length += 1
        ego_hit = ego_hit or out[EGO_ID].info["collided"]
        adv_hit = adv_hit or out[EGO_ID].info["adversary_collided"]
        obs = {a: s.observation for a, s in out.items()}
    return ret, length, ego_hit, adv_hit


def _eval_env(adv_policy, env_config, driver):
    if adv_policy is None:
        # rule-driven adversary slots never consult the policy
        return HighwayEnv(replace(env_config, adversary_control="rule"), driver)
    return HighwayEnv(replace(env_config, adversary_control="agent"), driver)


def evaluate_policy(ego: Checkpoint, adversary: Checkpoint | None, env_config: EpisodeConfig = EpisodeConfig(),
                    episodes: int = 100, seed: int = 0, driver: DriverParams = DriverParams()) -> EvalReport:
    """Run ``episodes`` seeded episodes with noise-free policies and aggregate the ego's outcomes.

    Without an adversary checkpoint the adversary slots drive by the rule
    model, so the same seeds give the same initial traffic in both settings.
    """
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    ego_policy = EgoPolicy(ego)
    adv_policy = AdversaryPolicy(adversary) if adversary is not None else None
    env = _eval_env(adv_policy, env_config, driver)
    rows = []
    for k, ep_seed in enumerate(episode_seeds(seed, episodes)):
        ret, length, ego_hit, adv_hit = _play(env, ego_policy, adv_policy, ep_seed)
        rows.append(EpisodeRow(k, ep_seed, length, ret, length, ego_hit, adv_hit))
    return EvalReport.from_rows(rows)


def rollout_episode(ego: Checkpoint, adversary: Checkpoint | None, env_config: EpisodeConfig = EpisodeConfig(),
                    seed: int = 0, driver: DriverParams = DriverParams()) -> tuple[list[dict], EpisodeRow]:
    """One evaluation episode with per-step trace records (see :mod:`advdrive.env.trace`)."""
    ego_policy = EgoPolicy(ego)
    adv_policy = AdversaryPolicy(adversary) if adversary is not None else None
    env = _eval_env(adv_policy, env_config, driver)
    env.record_trace(True)
    ret, length, ego_hit, adv_hit = _play(env, ego_policy, adv_policy, seed)
    return env.trace, EpisodeRow(0, seed, length, ret, length, ego_hit, adv_hit)


def welch_less(a, b) -> float:
    """One-sided Welch p-value for the hypothesis mean(a) < mean(b)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.var() == 0 and b.var() == 0:
        # the t statistic is undefined; the ordering of the constants is certain
        return 0.0 if a.mean() < b.mean() else 1.0
    return float(stats.ttest_ind(a, b, equal_var=False, alternative="less").pvalue)


def compare_reports(worse: EvalReport, better: EvalReport) -> dict:
    """Welch tests that ``better`` has higher return and longer episodes than ``worse``."""
    return {
        "mean_return": [worse.mean_return, better.mean_return],
        "mean_length": [worse.mean_length, better.mean_length],
        "ego_collision_rate": [worse.ego_collision_rate, better.ego_collision_rate],
        "p_return": welch_less([r.episode_return for r in worse.rows], [r.episode_return for r in better.rows]),
        "p_length": welch_less([r.length for r in worse.rows], [r.length for r in better.rows]),
    }
