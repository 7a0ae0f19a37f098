"""Simplified natural evolution strategies.

The search distribution is an isotropic Gaussian around the current genome.
Each generation draws noise vectors from seeds, scores ``theta + v`` (and
``theta - v`` with mirrored sampling), shapes the returns into centered
ranks and takes a plain SGD step::

    theta <- theta + lr / (n * sigma**2) * sum_i v_i * f_i

where ``n`` counts every evaluated individual.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable

import numpy as np

from .plastic_net import ContractError, PlasticNetwork

logger = logging.getLogger(__name__)

# Stream tags keep perturbation and episode seeds statistically independent.
_PERTURBATION_TAG = 0x5E5
_EPISODE_TAG = 0xE915


@dataclass(frozen=True)
class EsConfig:
    population_size: int = 50
    sigma: float = 0.1
    learning_rate: float = 0.05
    iterations: int = 300
    master_seed: int = 0
    mirrored: bool = True
    rank_shaping: bool = True
    weight_decay: float = 0.0
    momentum: float = 0.0
    episodes_per_eval: int = 3
    common_random_numbers: bool = True

    def __post_init__(self):
        if self.population_size < 1:
            raise ContractError("population_size must be positive")
        if self.sigma < 0 or self.learning_rate < 0:
            raise ContractError("sigma and learning_rate must be non-negative")
        if self.iterations < 0 or self.episodes_per_eval < 1:
            raise ContractError("iterations >= 0 and episodes_per_eval >= 1 required")
        if not 0 <= self.master_seed < 2**64:
            raise ContractError("master_seed must be a 64-bit unsigned integer")

    @property
    def n_individuals(self) -> int:
        return 2 * self.population_size if self.mirrored else self.population_size


@dataclass
class Population:
    """One generation's evaluated individuals.

    Individual ``k`` uses noise index ``indices[k]`` with sign ``signs[k]``;
    mirrored pairs are adjacent (+v then -v). Noise vectors themselves are
    never stored.
    """

    generation: int
    perturbation_seeds: list[int]
    indices: np.ndarray
    signs: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.signs = np.asarray(self.signs, dtype=np.float64)
        self.returns = np.asarray(self.returns, dtype=np.float64)
        if not (len(self.indices) == len(self.signs) == len(self.returns)):
            raise ContractError(
                f"population has {len(self.indices)} individuals but {len(self.returns)} returns"
            )


def perturbation_seed(master_seed: int, generation: int, index: int) -> int:
    ss = np.random.SeedSequence([master_seed, _PERTURBATION_TAG, generation, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def perturbation(master_seed: int, generation: int, index: int, dim: int, sigma: float) -> np.ndarray:
    """Gaussian noise vector with standard deviation ``sigma``, rebuilt from seeds."""
    rng = np.random.default_rng(perturbation_seed(master_seed, generation, index))
    return sigma * rng.standard_normal(dim)


def individuals(config: EsConfig) -> tuple[np.ndarray, np.ndarray]:
    """(noise index, sign) for every individual of a generation, in population order."""
    idx = np.arange(config.population_size)
    if config.mirrored:
        return np.repeat(idx, 2), np.tile([1.0, -1.0], config.population_size)
    return idx, np.ones(config.population_size)


def episode_seed_schedule(master_seed: int, generation: int, episodes_per_eval: int) -> list[int]:
    """Episode seeds shared by every individual of one generation."""
    if episodes_per_eval < 1:
        raise ContractError("episodes_per_eval must be >= 1")
    ss = np.random.SeedSequence([master_seed, _EPISODE_TAG, generation])
    return [int(s) for s in ss.generate_state(episodes_per_eval, dtype=np.uint64)]


def individual_episode_seeds(
    master_seed: int, generation: int, index: int, sign: float, episodes_per_eval: int
) -> list[int]:
    """Private episode seeds, used when common random numbers are disabled."""
    ss = np.random.SeedSequence(
        [master_seed, _EPISODE_TAG, generation, index, 0 if sign > 0 else 1]
    )
    return [int(s) for s in ss.generate_state(episodes_per_eval, dtype=np.uint64)]


def centered_ranks(returns) -> np.ndarray:
    """Map returns to ranks spread evenly over [-0.5, 0.5]; ties share their mean rank."""
    x = np.asarray(returns, dtype=np.float64).ravel()
    n = x.size
    if n < 2:
        raise ContractError("centered_ranks needs at least two returns")
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n)
    sorted_x = x[order]
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and sorted_x[stop] == sorted_x[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1)
        start = stop
    return ranks / (n - 1) - 0.5


def shaped_fitness(population: Population, config: EsConfig) -> np.ndarray:
    if config.rank_shaping:
        return centered_ranks(population.returns)
    return population.returns.copy()


def gradient_estimate(theta: np.ndarray, population: Population, config: EsConfig) -> np.ndarray:
    """Search-gradient estimate ``1/(n sigma^2) sum_i v_i f_i`` (minus weight decay)."""
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(~np.isfinite(population.returns)):
        raise ContractError(f"generation {population.generation} has missing returns")
    n = len(population.returns)
    if n != config.n_individuals:
        raise ContractError(
            f"generation {population.generation} has {n} returns, expected {config.n_individuals}"
        )
    grad = np.zeros(theta.size)
    if config.sigma > 0:
        f = shaped_fitness(population, config)
        # Fold each mirrored pair into one noise draw before accumulating.
        weights: dict[int, float] = {}
        for idx, sign, fk in zip(population.indices, population.signs, f):
            weights[int(idx)] = weights.get(int(idx), 0.0) + sign * fk
        for idx in sorted(weights):
            if weights[idx] != 0.0:
                eps = perturbation(config.master_seed, population.generation, idx, theta.size, 1.0)
                grad += weights[idx] * eps
        grad /= n * config.sigma
    if config.weight_decay:
        grad -= config.weight_decay * theta
    return grad


def update(theta, population: Population, config: EsConfig) -> np.ndarray:
    """One SGD step on the search gradient; ``theta`` is not modified."""
    theta = np.asarray(theta, dtype=np.float64)
    return theta + config.learning_rate * gradient_estimate(theta, population, config)


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    mean_return: float
    max_return: float
    min_return: float
    theta_norm: float
    wall_ms: float


TRAIN_LOG_HEADER = [f.name for f in fields(GenerationRecord)]


@dataclass
class TrainLog:
    records: list[GenerationRecord] = field(default_factory=list)

    def append(self, record: GenerationRecord) -> None:
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def deterministic_view(self) -> list[tuple]:
        """Everything except wall-clock timing, which no run can reproduce."""
        return [
            (r.generation, r.mean_return, r.max_return, r.min_return, r.theta_norm)
            for r in self.records
        ]

    def to_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_dicts(cls, rows: Iterable[dict]) -> "TrainLog":
        return cls([GenerationRecord(**row) for row in rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAIN_LOG_HEADER)
            for r in self.records:
                writer.writerow(record_row(r))


def record_row(r: GenerationRecord) -> list:
    return [r.generation] + [
        repr(float(v)) for v in (r.mean_return, r.max_return, r.min_return, r.theta_norm, r.wall_ms)
    ]


@dataclass
class TrainState:
    """Everything needed to continue a run: the next generation to draw and theta."""

    generation: int
    theta: np.ndarray
    log: TrainLog
    velocity: np.ndarray | None = None


def train(
    config: EsConfig,
    env_factory,
    net_template: PlasticNetwork,
    workers: int = 1,
    state: TrainState | None = None,
    on_generation: Callable[[TrainState], None] | None = None,
    stop_at: int | None = None,
) -> tuple[np.ndarray, TrainLog]:
    """Run the ES loop from the zero genome (or from ``state``).

    ``on_generation`` sees the state after each update, e.g. for
    checkpointing. ``stop_at`` ends the run early at that generation count
    while keeping the trajectory identical to an uninterrupted run.
    """
    from .eval_engine import WorkerPool, evaluate_generation

    dim = net_template.genome_size
    if state is None:
        state = TrainState(0, np.zeros(dim), TrainLog())
    if state.theta.size != dim:
        raise ContractError(f"start genome has length {state.theta.size}, expected {dim}")
    end = config.iterations if stop_at is None else min(stop_at, config.iterations)

    with WorkerPool(workers) as pool:
        while state.generation < end:
            g = state.generation
            t0 = time.perf_counter()
            population = evaluate_generation(
                state.theta, config, env_factory, net_template, g, pool=pool
            )
            grad = gradient_estimate(state.theta, population, config)
            if config.momentum:
                if state.velocity is None:
                    state.velocity = np.zeros(dim)
                state.velocity = config.momentum * state.velocity + grad
                step = state.velocity
            else:
                step = grad
            state.theta = state.theta + config.learning_rate * step
            r = population.returns
            record = GenerationRecord(
                generation=g,
                mean_return=float(np.mean(r)),
                max_return=float(np.max(r)),
                min_return=float(np.min(r)),
                theta_norm=float(np.linalg.norm(state.theta)),
                wall_ms=(time.perf_counter() - t0) * 1000.0,
            )
            state.log.append(record)
            state.generation = g + 1
            logger.debug("generation %d mean %.4f max %.4f", g, record.mean_return, record.max_return)
            if on_generation is not None:
                on_generation(state)
    return state.theta, state.log
