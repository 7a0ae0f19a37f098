import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plastic_es.environments import (
    Benchmark,
    CrippledThruster,
    EnvFactory,
    NonstationaryBandit,
    benchmark_eval,
    evaluate_genome,
    make_env,
)
from plastic_es.plastic_net import ContractError, PlasticNetwork

from oracles import thruster_reward


def play(env, seed, policy):
    obs = env.reset(seed)
    total, t, done = 0.0, 0, False
    while not done:
        res = env.step(policy(obs, t, env))
        total += res.reward
        obs, done, t = res.obs, res.done, t + 1
    return total, t


# -- crippled thruster ---------------------------------------------------------------


def test_dimensions():
    env = CrippledThruster()
    assert (env.spec.obs_dim, env.spec.action_dim, env.spec.episode_length) == (6, 4, 100)


def test_reset_is_deterministic():
    env = CrippledThruster()
    obs_a = env.reset(123)
    task_a = env.task
    obs_b = env.reset(123)
    assert env.task == task_a
    np.testing.assert_array_equal(obs_a, obs_b)


def test_initial_observation_is_zero_for_every_task():
    env = CrippledThruster()
    seen = set()
    for seed in range(40):
        np.testing.assert_array_equal(env.reset(seed), np.zeros(6))
        seen.add(env.task)
    assert seen == {0, 1, 2, 3}


def test_crippled_index_is_uniform():
    env = CrippledThruster()
    env.reset_batch(list(range(10_000)))
    counts = np.bincount(env.task_index, minlength=4)
    assert np.all(np.abs(counts - 2500) <= 150), counts


def test_zero_policy_returns_zero():
    total, steps = play(CrippledThruster(), 7, lambda obs, t, env: np.zeros(4))
    assert total == 0.0 and steps == 100


def test_oracle_policy_returns_225():
    def oracle(obs, t, env):
        a = np.ones(4)
        a[env.task] = 0.0
        return 2.0 * a  # unconstrained optimum 1/(2*0.25), clipped to 1

    for seed in range(8):
        total, _ = play(CrippledThruster(), seed, oracle)
        assert total == pytest.approx(225.0, abs=1e-9)


def test_uniform_policy_returns_200():
    total, _ = play(CrippledThruster(), 3, lambda obs, t, env: np.ones(4))
    assert total == pytest.approx(200.0, abs=1e-9)


def test_observation_layout():
    env = CrippledThruster()
    env.reset(5)
    crippled = env.task
    a = np.array([0.5, -3.0, 0.25, 1.0])
    res = env.step(a)
    expected_r = thruster_reward(a, crippled)
    np.testing.assert_allclose(res.obs, [0.5, -1.0, 0.25, 1.0, expected_r, 0.01])
    assert res.reward == pytest.approx(expected_r, abs=1e-15)


def test_step_after_done_fails():
    env = CrippledThruster(episode_length=2)
    env.reset(0)
    env.step(np.zeros(4))
    assert env.step(np.zeros(4)).done
    with pytest.raises(ContractError):
        env.step(np.zeros(4))


def test_step_before_reset_fails():
    with pytest.raises(ContractError):
        CrippledThruster().step(np.zeros(4))


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**63),
    actions=st.lists(st.lists(st.floats(-3, 3), min_size=4, max_size=4), min_size=1, max_size=10),
)
def test_reward_bounds_and_determinism(seed, actions):
    env = CrippledThruster()
    env.reset(seed)
    first = [env.step(np.array(a)).reward for a in actions]
    env.reset(seed)
    second = [env.step(np.array(a)).reward for a in actions]
    assert first == second
    for r in first:
        assert -4 * 1.25 <= r <= 4


def test_batch_rows_match_single_episodes():
    seeds = [11, 22, 33, 44, 55]
    rng = np.random.default_rng(0)
    actions = rng.uniform(-1.5, 1.5, (100, 5, 4))
    batch = CrippledThruster()
    batch.reset_batch(seeds)
    batch_rewards = np.array([batch.step_batch(a)[1] for a in actions])
    for k, s in enumerate(seeds):
        env = CrippledThruster()
        env.reset(s)
        single = [env.step(a[k]).reward for a in actions]
        np.testing.assert_array_equal(batch_rewards[:, k], single)


# -- bandit --------------------------------------------------------------------------


def bandit_mean(policy, episodes=4000, seed=0):
    """Mean return of ``policy(t, env, rng) -> arms`` over a batch of episodes."""
    env = NonstationaryBandit()
    rng = np.random.default_rng(seed)
    env.reset_batch(list(range(episodes)))
    total = np.zeros(episodes)
    done, t = False, 0
    while not done:
        arms = policy(t, env, rng)
        actions = np.zeros((episodes, 2))
        actions[np.arange(episodes), arms] = 1.0
        _, r, done = env.step_batch(actions)
        total += r
        t += 1
    assert t == 200
    return total.mean()


def one_hot(arm):
    a = np.zeros(2)
    a[arm] = 1.0
    return a


def test_bandit_spec_and_initial_obs():
    env = NonstationaryBandit()
    assert (env.spec.obs_dim, env.spec.action_dim, env.spec.episode_length) == (3, 2, 200)
    np.testing.assert_array_equal(env.reset(1), np.zeros(3))


def test_bandit_oracle_expected_return():
    mean = bandit_mean(lambda t, env, rng: env.good_arm())
    assert abs(mean - 180.0) < 0.4


def test_bandit_fixed_arm_expected_return():
    assert abs(bandit_mean(lambda t, env, rng: np.zeros(4000, dtype=int)) - 100.0) < 0.4


def test_bandit_random_arm_expected_return():
    assert abs(bandit_mean(lambda t, env, rng: rng.integers(2, size=4000)) - 100.0) < 0.7


def test_bandit_good_arm_flips_at_midpoint():
    env = NonstationaryBandit()
    env.reset(9)
    start = env.task
    arms = []
    for _ in range(200):
        arms.append(int(env.good_arm()[0]))
        env.step(one_hot(0))
    assert arms[:100] == [start] * 100
    assert arms[100:] == [1 - start] * 100


def test_bandit_observation_layout_and_determinism():
    env = NonstationaryBandit()
    env.reset(4)
    rewards = []
    for t in range(20):
        res = env.step(np.array([0.2, 0.7]))
        np.testing.assert_array_equal(res.obs[:2], [0.0, 1.0])
        assert res.obs[2] == res.reward and res.reward in (0.0, 1.0)
        rewards.append(res.reward)
    env.reset(4)
    assert rewards == [env.step(np.array([0.2, 0.7])).reward for _ in range(20)]


# -- benchmarks and genome evaluation --------------------------------------------------


def test_benchmark_values():
    assert benchmark_eval("sphere", np.zeros(5)) == 0.0
    assert benchmark_eval("rosenbrock", np.ones(4)) == 0.0
    assert benchmark_eval("sphere", [3.0, 4.0]) == -25.0
    assert benchmark_eval("rosenbrock", [0.0, 0.0]) == -1.0


def test_unknown_benchmark():
    with pytest.raises(ContractError):
        benchmark_eval("ackley", [0.0])
    with pytest.raises(ContractError):
        EnvFactory("ackley")


def test_benchmark_environment_is_single_step():
    env = Benchmark("sphere", dim=2)
    assert env.reset(0).shape == (0,)
    res = env.step([3.0, 4.0])
    assert res.done and res.reward == -25.0 and res.obs.shape == (0,)


def test_factory_builds_fresh_instances():
    factory = EnvFactory("crippled_thruster", {"episode_length": 10})
    a, b = factory(), factory()
    assert a is not b and a.spec.episode_length == 10
    with pytest.raises(ContractError):
        EnvFactory("bandit", {"arms": 3})()
    assert make_env("bandit").spec.obs_dim == 3


def test_zero_genome_on_thruster_returns_zero():
    template = PlasticNetwork.build([6, 8, 4])
    assert evaluate_genome(np.zeros(template.genome_size), template, EnvFactory("crippled_thruster"), [1, 2, 3]) == 0.0


def test_mean_is_permutation_invariant():
    template = PlasticNetwork.build([6, 4])
    theta = np.random.default_rng(3).standard_normal(template.genome_size)
    factory = EnvFactory("crippled_thruster")
    a = evaluate_genome(theta, template, factory, [5, 9, 13, 21])
    b = evaluate_genome(theta, template, factory, [21, 13, 5, 9])
    assert a == pytest.approx(b, rel=1e-14)
    singles = [evaluate_genome(theta, template, factory, [s]) for s in (5, 9, 13, 21)]
    assert a == pytest.approx(np.mean(singles), rel=1e-14)


def test_all_ones_static_genome_scores_200():
    template = PlasticNetwork.build([6, 4], plastic=False)
    net = template.from_flat(np.zeros(template.genome_size))
    net.layers[0].bias[:] = 30.0  # tanh(30) rounds to 1
    returns = evaluate_genome(net.to_flat(), template, EnvFactory("crippled_thruster"), range(10))
    assert returns == pytest.approx(200.0, abs=1e-9)


def test_traces_reset_between_episodes():
    template = PlasticNetwork.build([6, 4])
    theta = np.random.default_rng(4).standard_normal(template.genome_size)
    factory = EnvFactory("crippled_thruster")
    alone = evaluate_genome(theta, template, factory, [77])
    after_other = evaluate_genome(theta, template, factory, [12, 77]) * 2 - evaluate_genome(
        theta, template, factory, [12]
    )
    assert after_other == pytest.approx(alone, rel=1e-12)


def test_dimension_mismatch_between_net_and_env():
    template = PlasticNetwork.build([3, 4])
    with pytest.raises(ContractError):
        evaluate_genome(np.zeros(template.genome_size), template, EnvFactory("crippled_thruster"), [1])
