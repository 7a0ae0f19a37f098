"""Deterministic parallel evaluation of one ES generation.

Work items carry only seeds and indices. Each worker rebuilds its noise
vectors from ``(master_seed, generation, index)``, evaluates its slice of
the population as one vectorised batch and returns scalar returns, which are
reassembled in index order. Because every row of a batched rollout is
computed independently of its neighbours, the result is bitwise identical
for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .environments import mean_over_episodes, rollout
from .es_optimizer import (
    EsConfig,
    Population,
    episode_seed_schedule,
    individual_episode_seeds,
    individuals,
    perturbation,
    perturbation_seed,
)
from .plastic_net import PlasticNetwork


class EvaluationError(RuntimeError):
    def __init__(self, generation: int, index: int, cause: BaseException):
        super().__init__(f"evaluation failed at generation {generation}, individual {index}: {cause}")
        self.generation = generation
        self.index = index


@dataclass(frozen=True)
class WorkItem:
    generation: int
    index: int
    mirrored_sign: int
    episode_seeds: tuple[int, ...]


@dataclass(frozen=True)
class WorkResult:
    index: int
    mirrored_sign: int
    mean_return: float


def resolve_workers(workers: int) -> int:
    if workers < 0:
        raise ValueError("worker count must be >= 0")
    return workers or (os.cpu_count() or 1)


class WorkerPool:
    """A process pool that degrades to in-process execution for one worker."""

    def __init__(self, workers: int = 1):
        self.workers = resolve_workers(workers)
        self._executor = None

    def __enter__(self):
        if self.workers > 1:
            self._executor = ProcessPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, *exc):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def map(self, fn, chunks):
        if self._executor is None:
            return [fn(*c) for c in chunks]
        return list(self._executor.map(fn, *zip(*chunks)))


def work_items(config: EsConfig, generation: int) -> list[WorkItem]:
    shared = tuple(episode_seed_schedule(config.master_seed, generation, config.episodes_per_eval))
    items = []
    for idx, sign in zip(*individuals(config)):
        seeds = shared
        if not config.common_random_numbers:
            seeds = tuple(
                individual_episode_seeds(
                    config.master_seed, generation, int(idx), sign, config.episodes_per_eval
                )
            )
        items.append(WorkItem(generation, int(idx), int(sign), seeds))
    return items


def evaluate_items(
    theta: np.ndarray,
    config: EsConfig,
    env_factory,
    net_template: PlasticNetwork,
    items: list[WorkItem],
) -> list[WorkResult]:
    """Worker body: rebuild perturbed genomes from seeds and roll them out."""
    if not items:
        return []
    dim = theta.size
    noise: dict[int, np.ndarray] = {}
    genomes = np.empty((len(items), dim))
    for k, item in enumerate(items):
        if item.index not in noise:
            noise[item.index] = perturbation(config.master_seed, item.generation, item.index, dim, 1.0)
        genomes[k] = theta + item.mirrored_sign * (config.sigma * noise[item.index])
    seeds = np.array([item.episode_seeds for item in items], dtype=np.uint64)
    try:
        returns, _ = rollout(genomes, net_template, env_factory, seeds)
    except Exception as exc:
        raise EvaluationError(items[0].generation, _first_failure(theta, genomes, items, net_template, env_factory), exc) from exc
    means = mean_over_episodes(returns)
    return [WorkResult(it.index, it.mirrored_sign, float(m)) for it, m in zip(items, means)]


def _first_failure(theta, genomes, items, net_template, env_factory) -> int:
    for genome, item in zip(genomes, items):
        try:
            rollout(genome[None, :], net_template, env_factory, [item.episode_seeds])
        except Exception:
            return item.index
    return items[0].index


def evaluate_generation(
    theta,
    config: EsConfig,
    env_factory,
    net_template: PlasticNetwork,
    generation: int,
    workers: int = 1,
    pool: WorkerPool | None = None,
) -> Population:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size != net_template.genome_size:
        raise ValueError(f"theta has length {theta.size}, expected {net_template.genome_size}")
    items = work_items(config, generation)
    own_pool = pool is None
    if own_pool:
        pool = WorkerPool(workers).__enter__()
    try:
        n_workers = min(pool.workers, len(items))
        # Static partition by index stride.
        chunks = [
            (theta, config, env_factory, net_template, items[w::n_workers]) for w in range(n_workers)
        ]
        results = [r for chunk in pool.map(evaluate_items, chunks) for r in chunk]
    finally:
        if own_pool:
            pool.__exit__(None, None, None)
    if len(results) != len(items):
        raise RuntimeError(f"generation {generation}: expected {len(items)} results, got {len(results)}")
    by_key = {(r.index, r.mirrored_sign): r.mean_return for r in results}
    returns = [by_key[(it.index, it.mirrored_sign)] for it in items]
    return Population(
        generation=generation,
        perturbation_seeds=[
            perturbation_seed(config.master_seed, generation, i) for i in range(config.population_size)
        ],
        indices=[it.index for it in items],
        signs=[it.mirrored_sign for it in items],
        returns=returns,
    )
