import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, rel_err
from robust_vvc import forecast as fc
from robust_vvc.env import EnvConfig, VVCEnv
from robust_vvc.grid import load_case
from robust_vvc.marl import (
    MADDPG,
    MATD3,
    MPNRS,
    Ensemble,
    LearnerConfig,
    NoiseSchedule,
    ReplayBuffer,
    td_target,
    train,
)
from robust_vvc.marl.training import read_curve, write_curve

SMALL = dict(policy_hidden=(8, 8), critic_hidden=(10, 6), batch_size=8, buffer_capacity=200)


@pytest.fixture(scope="module")
def env():
    net = load_case("toy6")
    return VVCEnv(net, fc.generate_profiles(3, 1200, net), 4.0, EnvConfig(episode_length=10))


def random_batch(ens, rng, n=6):
    S, D, O = ens.state_dim, ens.joint_dim, sum(ens.obs_dims)
    buf = ReplayBuffer(50, S, D, O)
    for _ in range(n):
        buf.add(rng.normal(size=S), rng.normal(size=S), rng.uniform(-0.8, 0.8, D), rng.normal(), rng.normal(),
                rng.normal(size=(3, O)), rng.normal(size=(3, O)))
    return buf.take(np.arange(n))


def test_td_target():
    assert td_target(1.0, 0.5, 2.0, 0.9, 3.0, 2.0) == pytest.approx(1.0 + 1.0 + 1.8)
    assert td_target(1.0, 0.5, 0.0, 0.9, 3.0) == pytest.approx(1.0 + 2.7)


def test_noise_schedule():
    ns = NoiseSchedule(0.1, 0.02, 4)
    vals = [ns.value] + [ns.step() for _ in range(6)]
    assert vals[0] == 0.1 and vals[4] == pytest.approx(0.02) and vals[-1] == pytest.approx(0.02)
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_replay_buffer():
    buf = ReplayBuffer(3, 2, 1, 1)
    assert not buf.add(np.zeros(2), np.zeros(2), [0], 0, 0, np.zeros((3, 1)), np.zeros((3, 1)), done=False)
    assert len(buf) == 0
    for k in range(5):
        buf.add(np.full(2, k), np.zeros(2), [k], float(k), 0.0, np.zeros((3, 1)), np.zeros((3, 1)))
    assert len(buf) == 3 and sorted(buf.reward) == [2.0, 3.0, 4.0]
    b = buf.sample(np.random.default_rng(0), 10)
    assert b.state.shape == (10, 2) and b.obs.shape == (10, 3, 1)
    with pytest.raises(ValueError):
        ReplayBuffer(3, 2, 1, 1).sample(np.random.default_rng(0), 1)


@pytest.mark.parametrize("alg, heads, critics, lam", [(MPNRS, 3, 2, 1.0), (MATD3, 1, 2, 0.0), (MADDPG, 1, 1, 0.0)])
def test_algorithm_variants(env, alg, heads, critics, lam):
    ens = Ensemble.for_env(env, LearnerConfig(algorithm=alg, **SMALL), np.random.default_rng(0))
    assert all(len(a.heads) == heads and len(a.critics) == critics for a in ens.agents)
    assert ens.cfg.shaping == lam
    obs = env.reset(400)
    acts = ens.select_actions(obs, 0.3, np.random.default_rng(1))
    for a in acts:
        assert a.shape == (3, 1) and np.all(np.abs(a) <= 0.8)
        if heads == 1:
            assert np.all(a == a[0])


def test_critic_input_size(env):
    ens = Ensemble.for_env(env, LearnerConfig(policy_hidden=(8,)), np.random.default_rng(0))
    d = 3 * env.obs_dim(0)
    assert ens.agents[0].q1.dims == [env.state_dim + 2, 2 * d, d, 1]


def test_critic_gradient(env):
    rng = np.random.default_rng(2)
    ens = Ensemble.for_env(env, LearnerConfig(**SMALL), rng)
    batch = random_batch(ens, rng)
    agent = ens.agents[0]
    x = np.concatenate([batch.state, batch.action], axis=1)
    y = rng.normal(size=len(batch))
    grad, _ = agent.critic_gradient(x, y)

    def loss(p):
        old = agent.critic_flat.copy()
        agent.critic_flat[:] = p
        v = sum(float(np.mean((q(x)[:, 0] - y) ** 2)) for q in agent.critics)
        agent.critic_flat[:] = old
        return v

    assert rel_err(grad, central_diff(loss, agent.critic_flat.copy(), 1e-5)) < 1e-4


def test_actor_gradient(env):
    rng = np.random.default_rng(3)
    cfg = LearnerConfig(policy_out_gain=1.0, **SMALL)
    ens = Ensemble.for_env(env, cfg, rng)
    batch = random_batch(ens, rng)
    m = 1
    agent, sl = ens.agents[m], ens.obs_slices[m]
    grad, _ = agent.actor_gradient(batch, sl)

    def objective(p):
        old = agent.policy_flat.copy()
        agent.policy_flat[:] = p
        total = 0.0
        for h, head in enumerate(agent.heads):
            joint = batch.action.copy()
            joint[:, agent.act_index] = head(batch.obs[:, h, sl])
            total -= float(np.mean(agent.q1(np.concatenate([batch.state, joint], axis=1))))
        agent.policy_flat[:] = old
        return total

    assert rel_err(grad, central_diff(objective, agent.policy_flat.copy(), 1e-5)) < 1e-4


def test_update_moves_online_and_targets(env):
    rng = np.random.default_rng(4)
    ens = Ensemble.for_env(env, LearnerConfig(**SMALL), rng)
    batch = random_batch(ens, rng, 8)
    a = ens.agents[0]
    p0, c0, tp0 = a.policy_flat.copy(), a.critic_flat.copy(), a.target_policy_flat.copy()
    stats = ens.update(batch, rng)
    assert ens.iterations == 1 and len(stats.critic_loss) == 2
    assert not np.array_equal(a.policy_flat, p0) and not np.array_equal(a.critic_flat, c0)
    assert np.allclose(a.target_policy_flat, 0.99 * tp0 + 0.01 * a.policy_flat, atol=1e-15)


def test_checkpoint_round_trip(env):
    ens = Ensemble.for_env(env, LearnerConfig(**SMALL), np.random.default_rng(5))
    back = Ensemble.from_dict(json.loads(json.dumps(ens.to_dict())))
    obs = env.reset(450)
    for a, b in zip(ens.select_actions(obs), back.select_actions(obs)):
        assert np.array_equal(a, b)
    for a, b in zip(ens.agents, back.agents):
        assert np.array_equal(a.target_critic_flat, b.critic_flat)
    bad = ens.to_dict()
    bad["version"] = 99
    with pytest.raises(ValueError):
        Ensemble.from_dict(bad)


def test_train_deterministic_and_warmup(env, tmp_path):
    cfg = LearnerConfig(warmup_steps=15, **SMALL)
    r1 = train(env, cfg, 4, seed=[7, 0], episode_length=10)
    r2 = train(env, cfg, 4, seed=[7, 0], episode_length=10)
    assert [c["mean_reward"] for c in r1.curve] == [c["mean_reward"] for c in r2.curve]
    assert r1.starts == r2.starts and r1.stored == 40
    # 40 steps, the first 15 random, updates once the buffer holds a batch
    assert r1.ensemble.iterations == 40 - 15
    write_curve(str(tmp_path / "c.csv"), r1.curve)
    assert read_curve(str(tmp_path / "c.csv")) == r1.curve


def test_iteration_budget(env):
    cfg = LearnerConfig(total_iterations=5, iterations_per_step=2, **SMALL)
    res = train(env, cfg, 2, seed=1, episode_length=10)
    assert res.ensemble.iterations == 5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(0.1, 1.0))
def test_actions_within_eta(seed, eta):
    rng = np.random.default_rng(seed)
    ens = Ensemble([6, 9], [[0], [1, 2]], 20, LearnerConfig(eta=eta, policy_hidden=(4,), policy_out_gain=5.0), rng)
    obs = [rng.normal(size=(3, 6)) * 10, rng.normal(size=(3, 9)) * 10]
    for a in ens.select_actions(obs, 1.0, rng) + ens.random_actions(rng):
        assert np.all(np.abs(a) <= eta)
