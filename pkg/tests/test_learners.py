import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from advdrive.errors import ConfigError, UsageError
from advdrive.learners import (
    PpoConfig,
    PpoLearner,
    ReplayBuffer,
    RolloutBuffer,
    Td3Config,
    Td3Learner,
    categorical,
    compute_gae,
    normalize_advantages,
    ppo_clip_objective,
    ppo_policy_loss,
    ppo_update,
    project_discrete_action,
    sample_discrete,
    smooth_target_action,
    td3_target,
    td3_update,
)
from advdrive.nn import AdamState, Mlp, params_digest

# --- GAE --------------------------------------------------------------------

def test_gae_single_terminal_step():
    adv, ret = compute_gae([1.5], [0.4], [1.0], 9.0, 0.99, 0.95)
    assert adv[0] == 1.5 - 0.4 and ret[0] == 1.5


def test_gae_lambda_zero_is_one_step_td(rng):
    r, v = rng.normal(size=10), rng.normal(size=10)
    d = np.zeros(10)
    adv, _ = compute_gae(r, v, d, 0.7, 0.9, 0.0)
    nxt = np.append(v[1:], 0.7)
    np.testing.assert_array_equal(adv, r + 0.9 * nxt - v)


def test_gae_matches_direct_summation(rng):
    for _ in range(20):
        r, v = rng.normal(size=50), rng.normal(size=50)
        d = (rng.random(50) < 0.1).astype(float)
        boot = float(rng.normal())
        adv, ret = compute_gae(r, v, d, boot, 0.99, 0.95)
        ref_adv, ref_ret = oracles.gae(list(r), list(v), list(d), boot, 0.99, 0.95)
        for a, b in zip(adv, ref_adv):
            assert oracles.rel_err(a, b) < 1e-9
        for a, b in zip(ret, ref_ret):
            assert oracles.rel_err(a, b) < 1e-9


def test_gae_shape_check():
    with pytest.raises(Exception):
        compute_gae([1.0, 2.0], [1.0], [0.0, 0.0], 0.0, 0.9, 0.9)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=200))
def test_normalized_advantages(values):
    a = np.array(values)
    if a.std() < 1e-3:
        return
    z = normalize_advantages(a)
    assert abs(z.mean()) < 1e-9
    assert abs(z.var() - 1.0) < 1e-6


# --- clipped surrogate ----------------------------------------------------------

def test_clip_objective_examples():
    assert ppo_clip_objective(1.0, 2.0, 0.2) == 2.0
    assert ppo_clip_objective(2.0, 1.0, 0.2) == pytest.approx(1.2, abs=1e-15)
    assert ppo_clip_objective(0.5, -1.0, 0.2) == pytest.approx(-0.8, abs=1e-15)


@given(st.floats(0.01, 5), st.floats(-10, 10), st.floats(0.05, 0.5))
def test_clip_objective_is_min_of_both_terms(ratio, adv, eps):
    obj = float(ppo_clip_objective(ratio, adv, eps))
    assert obj <= ratio * adv + 1e-12
    assert obj <= float(np.clip(ratio, 1 - eps, 1 + eps)) * adv + 1e-12
    assert oracles.rel_err(obj, oracles.clip_objective(ratio, adv, eps)) < 1e-9


def test_policy_loss_gradient_matches_finite_differences(rng):
    for trial in range(20):
        b = 16
        logits = rng.normal(size=(b, 5))
        actions = rng.integers(5, size=b)
        old = np.log(categorical(logits + 0.3 * rng.normal(size=logits.shape))[0])[np.arange(b), actions]
        adv = rng.normal(size=b)
        _, grad, _, _ = ppo_policy_loss(logits, actions, old, adv, 0.2, 0.01)
        h = 1e-6
        for i in range(b):
            for j in range(5):
                up, down = logits.copy(), logits.copy()
                up[i, j] += h
                down[i, j] -= h
                fd = (ppo_policy_loss(up, actions, old, adv, 0.2, 0.01)[0]
                      - ppo_policy_loss(down, actions, old, adv, 0.2, 0.01)[0]) / (2 * h)
                assert grad[i, j] == pytest.approx(fd, abs=1e-7)


# --- categorical sampling -----------------------------------------------------

def policy_with_logits(logits):
    k = len(logits)
    return Mlp((1, k), [np.zeros((k, 1))], [np.asarray(logits, dtype=float)])


def test_uniform_logits():
    p, _, ent = categorical(np.zeros(5))
    np.testing.assert_allclose(p, 0.2, atol=1e-15)
    assert ent == pytest.approx(math.log(5), abs=1e-15)


def test_saturated_logit(rng):
    pol = policy_with_logits([0, 0, 20, 0, 0])
    p, _, _ = categorical(pol(np.zeros(1)))
    assert p[2] > 0.999
    assert sample_discrete(pol, np.zeros(1), rng, deterministic=True)[0] == 2


def test_sampling_frequencies_match_softmax(rng):
    logits = np.array([0.5, -1.0, 2.0, 0.0, 1.0])
    pol = policy_with_logits(logits)
    n = 100_000
    counts = np.bincount([sample_discrete(pol, np.zeros(1), rng)[0] for _ in range(n)], minlength=5)
    p = categorical(logits)[0]
    assert np.max(np.abs(counts / n - p)) < 0.01
    _, logp, ent = sample_discrete(pol, np.zeros(1), rng)
    assert ent == pytest.approx(-(p * np.log(p)).sum(), rel=1e-12)


# --- PPO update ---------------------------------------------------------------

def filled_rollout(rng, n=64, obs_size=3, reward=None):
    buf = RolloutBuffer(n, obs_size)
    for _ in range(n):
        buf.add(rng.normal(size=obs_size), int(rng.integers(5)), math.log(0.2),
                0.0 if reward is None else reward, 0.0, True)
    return buf


def test_zero_advantages_leave_policy_unchanged(rng):
    cfg = PpoConfig(entropy_coef=0.0, rollout_length=64)
    learner = PpoLearner(3, 5, cfg, rng)
    buf = filled_rollout(rng)
    buf.compute_advantages(0.0, cfg.gamma, cfg.gae_lambda)
    before = params_digest(learner.policy)
    stats_ = learner.update(buf)
    assert params_digest(learner.policy) == before
    assert 0.0 <= stats_.clip_fraction <= 1.0


def test_update_requires_advantages(rng):
    learner = PpoLearner(3, 5, PpoConfig(), rng)
    with pytest.raises(UsageError):
        learner.update(filled_rollout(rng))


def bandit_updates_to_solve(seed, max_updates=50):
    cfg = PpoConfig(rollout_length=64)
    learner = PpoLearner(1, 2, cfg, np.random.default_rng(seed))
    obs = np.ones(1)
    buf = RolloutBuffer(cfg.rollout_length, 1)
    for update in range(1, max_updates + 1):
        for _ in range(cfg.rollout_length):
            a, logp, v = learner.act(obs)
            buf.add(obs, a, logp, 1.0 if a == 0 else 0.0, v, True)
        buf.compute_advantages(0.0, cfg.gamma, cfg.gae_lambda)
        st_ = learner.update(buf)
        assert 0.0 <= st_.clip_fraction <= 1.0
        buf.reset()
        if categorical(learner.policy(obs))[0][0] > 0.95:
            return update
    return None


def test_bandit_solved_quickly():
    n = bandit_updates_to_solve(0)
    assert n is not None and n <= 50


def test_ppo_update_deterministic(rng):
    def run():
        r = np.random.default_rng(5)
        learner = PpoLearner(3, 5, PpoConfig(rollout_length=32, minibatch_size=8, epochs=2), r)
        buf = RolloutBuffer(32, 3)
        for t in range(32):
            a, lp, v = learner.act(r.normal(size=3))
            buf.add(r.normal(size=3), a, lp, float(r.normal()), v, t % 7 == 6)
        buf.compute_advantages(0.0, 0.99, 0.95)
        learner.update(buf)
        return params_digest(learner.policy) + params_digest(learner.value)

    assert run() == run()


def test_rollout_buffer_capacity(rng):
    buf = filled_rollout(rng, n=4)
    assert buf.full
    with pytest.raises(UsageError):
        buf.add(np.zeros(3), 0, 0.0, 0.0, 0.0, False)


@pytest.mark.parametrize("kwargs", [{"clip_eps": 0}, {"gamma": 1.5}, {"epochs": 0}, {"gae_lambda": -0.1}])
def test_ppo_config_validation(kwargs):
    with pytest.raises(ConfigError):
        PpoConfig(**kwargs)


# --- TD3 pieces ---------------------------------------------------------------

def test_td3_target_examples():
    assert td3_target(0.5, 1.0, 3.0, 4.0, 0.99) == 0.5
    assert td3_target(0.5, 0.0, 2.0, 1.0, 0.9) == pytest.approx(1.4, abs=1e-15)
    assert td3_target(0.5, 0.0, 2.0, 2.0, 0.9) == 0.5 + 0.9 * 2.0


@given(st.floats(-5, 5), st.sampled_from([0.0, 1.0]), st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 1))
def test_td3_target_uses_pairwise_minimum(r, done, q1, q2, gamma):
    y = td3_target(r, done, q1, q2, gamma)
    assert y <= r + gamma * (1 - done) * max(q1, q2) + 1e-12
    assert oracles.rel_err(y, oracles.td3_target(r, done, q1, q2, gamma)) < 1e-9


def test_smoothing(rng):
    u = np.array([0.3, -0.2, 1.0, -1.0, 0.0])
    np.testing.assert_array_equal(smooth_target_action(u, 0.0, 0.5, rng), u)
    for _ in range(200):
        out = smooth_target_action(rng.uniform(-1, 1, 5), 0.5, 0.5, rng)
        assert np.all(np.abs(out) <= 1.0)
    big = smooth_target_action(np.ones(5), 100.0, 100.0, np.random.default_rng(1))
    assert np.all((big == 1.0) | (big < 1.0))
    assert smooth_target_action(np.ones(1), 1e-9, 1e-9, rng)[0] <= 1.0


def test_saturated_action_stays_at_bound():
    class PositiveNoise:
        def normal(self, loc, scale, size):
            return np.full(size, 10.0)

    out = smooth_target_action(np.ones(5), 0.2, 0.5, PositiveNoise())
    np.testing.assert_array_equal(out, np.ones(5))


def test_projection_examples():
    assert project_discrete_action(np.array([0.9, -0.1, 0, 0, 0])) == 0
    assert project_discrete_action(np.full(5, 0.3)) == 0
    assert project_discrete_action(np.array([0, 0, 0, 0.5, 0.1])) == 3
    with pytest.raises(ValueError):
        project_discrete_action(np.zeros((2, 5)))


# --- replay buffer ------------------------------------------------------------

def test_replay_evicts_oldest_first():
    buf = ReplayBuffer(4, 1, 1)
    for k in range(7):
        buf.add([k], [0.0], float(k), [k + 1], 0.0)
    assert len(buf) == 4
    assert sorted(buf.rewards) == [3.0, 4.0, 5.0, 6.0]
    assert sorted(buf.insert_order) == [3, 4, 5, 6]


def test_replay_sampling_uniform(rng):
    buf = ReplayBuffer(50, 1, 1)
    for k in range(50):
        buf.add([k], [0.0], 0.0, [0], 0.0)
    idx = np.concatenate([buf.sample_indices(1000, rng) for _ in range(100)])
    counts = np.bincount(idx, minlength=50)
    assert stats.chisquare(counts).pvalue > 0.01


def test_replay_empty_sample_raises(rng):
    with pytest.raises(UsageError):
        ReplayBuffer(3, 1, 1).sample(2, rng)


# --- TD3 update ---------------------------------------------------------------

def td3_setup(seed=0, **kwargs):
    rng = np.random.default_rng(seed)
    cfg = Td3Config(batch_size=32, **kwargs)
    learner = Td3Learner(4, 5, cfg, rng)
    buf = ReplayBuffer(500, 4, 5)
    for _ in range(200):
        buf.add(rng.normal(size=4), rng.uniform(-1, 1, 5), float(rng.normal()), rng.normal(size=4),
                float(rng.random() < 0.1))
    return learner, buf, cfg, rng


def digests(learner, names):
    nets = learner.networks()
    return {k: params_digest(nets[k]) for k in names}


def test_td3_delay_freezes_actor_and_targets():
    learner, buf, cfg, rng = td3_setup(policy_delay=2)
    frozen = ("actor", "actor_target", "q1_target", "q2_target")
    before = digests(learner, frozen + ("q1",))
    stats_ = td3_update(learner, buf, cfg, 1, rng)
    after = digests(learner, frozen + ("q1",))
    assert not stats_.actor_updated
    assert all(before[k] == after[k] for k in frozen)
    assert before["q1"] != after["q1"]
    assert td3_update(learner, buf, cfg, 2, rng).actor_updated
    assert digests(learner, ("actor",))["actor"] != before["actor"]


def test_td3_full_soft_update_copies():
    learner, buf, cfg, rng = td3_setup(tau=1.0)
    td3_update(learner, buf, cfg, 0, rng)
    for src, dst in (("actor", "actor_target"), ("q1", "q1_target"), ("q2", "q2_target")):
        nets = learner.networks()
        assert params_digest(nets[src]) == params_digest(nets[dst])


def test_td3_critics_fit_zero_rewards():
    rng = np.random.default_rng(0)
    cfg = Td3Config(batch_size=64, gamma=0.0, critic_lr=1e-3)
    learner = Td3Learner(4, 5, cfg, rng)
    buf = ReplayBuffer(1000, 4, 5)
    for _ in range(1000):
        buf.add(rng.normal(size=4), rng.uniform(-1, 1, 5), 0.0, rng.normal(size=4), 0.0)
    for step in range(2000):
        td3_update(learner, buf, cfg, step, rng)
    x = np.concatenate([buf.obs, buf.actions], axis=1)
    assert np.mean(learner.q1(x) ** 2) < 1e-4
    assert np.mean(learner.q2(x) ** 2) < 1e-4


def test_td3_update_deterministic():
    def run():
        learner, buf, cfg, rng = td3_setup(seed=4)
        for step in range(5):
            td3_update(learner, buf, cfg, step, rng)
        return b"".join(digests(learner, learner.networks()).values())

    assert run() == run()


def test_td3_needs_a_full_batch():
    learner, _, cfg, rng = td3_setup()
    with pytest.raises(UsageError):
        td3_update(learner, ReplayBuffer(10, 4, 5), cfg, 0, rng)


@pytest.mark.parametrize("kwargs", [{"policy_delay": 0}, {"tau": 0}, {"gamma": 2}, {"batch_size": 0}])
def test_td3_config_validation(kwargs):
    with pytest.raises(ConfigError):
        Td3Config(**kwargs)


def test_exploration_stays_in_box():
    learner, _, _, _ = td3_setup()
    for _ in range(100):
        u = learner.explore(np.random.default_rng(0).normal(size=4))
        assert np.all(np.abs(u) <= 1.0)
