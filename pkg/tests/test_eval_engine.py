import dataclasses
import subprocess
import sys

import numpy as np
import pytest

from plastic_es.environments import EnvFactory, evaluate_genome
from plastic_es.es_optimizer import EsConfig, episode_seed_schedule, perturbation
from plastic_es.eval_engine import (
    EvaluationError,
    WorkItem,
    evaluate_generation,
    work_items,
)
from plastic_es.plastic_net import PlasticNetwork

THRUSTER = EnvFactory("crippled_thruster")


@pytest.fixture(scope="module")
def template():
    return PlasticNetwork.build([6, 5, 4])


def test_worker_count_does_not_change_returns(template):
    config = EsConfig(population_size=10, sigma=0.3, master_seed=17)
    theta = np.random.default_rng(0).standard_normal(template.genome_size) * 0.5
    one = evaluate_generation(theta, config, THRUSTER, template, generation=3, workers=1)
    eight = evaluate_generation(theta, config, THRUSTER, template, generation=3, workers=8)
    np.testing.assert_array_equal(one.returns, eight.returns)
    np.testing.assert_array_equal(one.indices, eight.indices)
    np.testing.assert_array_equal(one.signs, eight.signs)


def test_zero_noise_individual_equals_direct_evaluation(template):
    config = EsConfig(population_size=1, sigma=0.0, mirrored=False, episodes_per_eval=4, master_seed=2)
    theta = np.random.default_rng(1).standard_normal(template.genome_size)
    pop = evaluate_generation(theta, config, THRUSTER, template, generation=5)
    seeds = episode_seed_schedule(2, 5, 4)
    assert pop.returns[0] == evaluate_genome(theta, template, THRUSTER, seeds)


def test_individual_return_matches_reconstructed_genome(template):
    config = EsConfig(population_size=3, sigma=0.2, master_seed=8)
    theta = np.zeros(template.genome_size)
    pop = evaluate_generation(theta, config, THRUSTER, template, generation=1)
    seeds = episode_seed_schedule(8, 1, config.episodes_per_eval)
    for k in (0, 3, 5):
        genome = theta + pop.signs[k] * (0.2 * perturbation(8, 1, int(pop.indices[k]), theta.size, 1.0))
        assert pop.returns[k] == evaluate_genome(genome, template, THRUSTER, seeds)


@pytest.mark.parametrize("mirrored,expected", [(True, 14), (False, 7)])
def test_evaluation_count(template, mirrored, expected):
    config = EsConfig(population_size=7, mirrored=mirrored)
    pop = evaluate_generation(np.zeros(template.genome_size), config, THRUSTER, template, 0)
    assert len(pop.returns) == expected == len(work_items(config, 0))
    assert len(pop.perturbation_seeds) == 7


def test_work_items_carry_no_parameters():
    config = EsConfig(population_size=4, episodes_per_eval=3)
    field_names = {f.name for f in dataclasses.fields(WorkItem)}
    assert field_names == {"generation", "index", "mirrored_sign", "episode_seeds"}
    for item in work_items(config, 2):
        assert len(item.episode_seeds) == 3


def test_common_random_numbers_share_seeds():
    items = work_items(EsConfig(population_size=5), 4)
    assert len({it.episode_seeds for it in items}) == 1
    private = work_items(EsConfig(population_size=5, common_random_numbers=False), 4)
    assert len({it.episode_seeds for it in private}) == 10


def test_episode_seed_schedule():
    a = episode_seed_schedule(99, 7, 5)
    assert a == episode_seed_schedule(99, 7, 5)
    assert len(a) == 5 and all(0 <= s < 2**64 for s in a)
    assert a != episode_seed_schedule(99, 8, 5)
    assert a != episode_seed_schedule(100, 7, 5)
    firsts = {episode_seed_schedule(99, g, 1)[0] for g in range(2000)}
    assert len(firsts) == 2000


def test_episode_seed_schedule_is_stable_across_processes():
    out = subprocess.run(
        [sys.executable, "-c", "from plastic_es.es_optimizer import episode_seed_schedule as s; print(s(0, 0, 2))"],
        capture_output=True, text=True, check=True,
    ).stdout.strip()
    assert out == str(episode_seed_schedule(0, 0, 2))


def test_theta_length_checked(template):
    with pytest.raises(ValueError):
        evaluate_generation(np.zeros(3), EsConfig(), THRUSTER, template, 0)


class _ExplodingEnv:
    def __init__(self):
        from plastic_es.environments import CrippledThruster

        self._inner = CrippledThruster()
        self.spec = self._inner.spec
        self.task_index = None

    def reset_batch(self, seeds):
        obs = self._inner.reset_batch(seeds)
        self.task_index = self._inner.task_index
        return obs

    def step_batch(self, actions):
        if np.any(np.abs(actions) > 0.999):
            raise FloatingPointError("actuator overload")
        return self._inner.step_batch(actions)


def test_failure_names_generation_and_individual(template):
    config = EsConfig(population_size=4, sigma=0.0, mirrored=False)
    net = template.from_flat(np.zeros(template.genome_size))
    net.layers[-1].bias[:] = 20.0
    with pytest.raises(EvaluationError) as info:
        evaluate_generation(net.to_flat(), config, _ExplodingEnv, template, generation=6)
    assert info.value.generation == 6 and info.value.index == 0
    assert "generation 6" in str(info.value)
