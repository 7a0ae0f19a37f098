"""Episodic environments with a hidden per-episode task.

Every environment is vectorised over a batch of independent episodes
(``reset_batch``/``step_batch``); the single-episode ``reset``/``step`` API is
a batch of one. Per-row results never depend on the other rows in the batch.

Observation layouts
-------------------
crippled_thruster  (obs_dim = K + 2): previous clipped action (K), previous
    reward, timestep / episode_length. Initial observation is all zeros.
bandit             (obs_dim = 3): previous arm as one-hot (2), previous reward.
    Initial observation is all zeros.
sphere/rosenbrock  (obs_dim = 0): single-step episode; the action is the point
    being scored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .plastic_net import ContractError


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    action_dim: int
    episode_length: int
    name: str


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool


def episode_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


class Environment:
    """Base class: subclasses implement the batched dynamics."""

    spec: EnvSpec

    def __init__(self):
        self._t = 0
        self._batch = 0
        self.task_index: np.ndarray = np.zeros(0, dtype=np.int64)

    # -- batched API ---------------------------------------------------------

    def reset_batch(self, seeds: Sequence[int]) -> np.ndarray:
        self._t = 0
        self._batch = len(seeds)
        return self._reset(seeds)

    def step_batch(self, actions) -> tuple[np.ndarray, np.ndarray, bool]:
        if self._batch == 0:
            raise ContractError("step called before reset")
        if self._t >= self.spec.episode_length:
            raise ContractError("step called after episode end")
        actions = np.asarray(actions, dtype=np.float64).reshape(self._batch, self.spec.action_dim)
        obs, rewards = self._step(actions)
        self._t += 1
        return obs, rewards, self._t >= self.spec.episode_length

    # -- single-episode API --------------------------------------------------

    def reset(self, episode_seed: int) -> np.ndarray:
        return self.reset_batch([episode_seed])[0]

    def step(self, action) -> StepResult:
        if self._batch != 1:
            raise ContractError("single-episode step requires a single-episode reset")
        obs, rewards, done = self.step_batch(np.asarray(action)[None, :])
        return StepResult(obs[0], float(rewards[0]), done)

    @property
    def task(self) -> int | None:
        """Hidden task index of the (single) current episode."""
        if self._batch != 1:
            return None
        return int(self.task_index[0])

    @property
    def timestep(self) -> int:
        return self._t

    def _reset(self, seeds):
        raise NotImplementedError

    def _step(self, actions):
        raise NotImplementedError


class CrippledThruster(Environment):
    """K actuators, one of which is silently disabled each episode.

    Reward per step is ``sum_i g_i a_i - penalty * sum_i a_i**2`` with
    ``g_i = 0`` for the crippled actuator and 1 otherwise; actions are
    clipped into [-1, 1].
    """

    def __init__(self, n_actuators: int = 4, penalty: float = 0.25, episode_length: int = 100):
        super().__init__()
        if n_actuators < 1 or episode_length < 1:
            raise ContractError("n_actuators and episode_length must be positive")
        self.n_actuators = n_actuators
        self.penalty = penalty
        self.spec = EnvSpec(n_actuators + 2, n_actuators, episode_length, "crippled_thruster")

    def _reset(self, seeds):
        self.task_index = np.array(
            [episode_rng(s).integers(self.n_actuators) for s in seeds], dtype=np.int64
        )
        self._gain = np.ones((len(seeds), self.n_actuators))
        self._gain[np.arange(len(seeds)), self.task_index] = 0.0
        return np.zeros((len(seeds), self.spec.obs_dim))

    def _step(self, actions):
        a = np.clip(actions, -1.0, 1.0)
        thrust = np.zeros(len(a))
        effort = np.zeros(len(a))
        for i in range(self.n_actuators):
            thrust += self._gain[:, i] * a[:, i]
            effort += a[:, i] * a[:, i]
        reward = thrust - self.penalty * effort
        clock = np.full((len(a), 1), (self._t + 1) / self.spec.episode_length)
        obs = np.concatenate([a, reward[:, None], clock], axis=1)
        return obs, reward


class NonstationaryBandit(Environment):
    """Two Bernoulli arms; which arm is good is hidden and flips at mid-episode.

    The chosen arm is the argmax of the 2-vector action. Payoff draws come
    from the episode's own RNG stream, so (seed, actions) fixes the rewards.
    """

    def __init__(
        self,
        p_good: float = 0.9,
        p_bad: float = 0.1,
        episode_length: int = 200,
        flip_at: int | None = None,
    ):
        super().__init__()
        if episode_length < 1:
            raise ContractError("episode_length must be positive")
        self.p_good = p_good
        self.p_bad = p_bad
        self.flip_at = episode_length // 2 if flip_at is None else flip_at
        self.spec = EnvSpec(3, 2, episode_length, "bandit")

    def _reset(self, seeds):
        tasks, draws = [], []
        for s in seeds:
            rng = episode_rng(s)
            tasks.append(rng.integers(2))
            draws.append(rng.random(self.spec.episode_length))
        self.task_index = np.array(tasks, dtype=np.int64)
        self._draws = np.array(draws).reshape(len(seeds), self.spec.episode_length)
        return np.zeros((len(seeds), 3))

    def good_arm(self) -> np.ndarray:
        """Currently good arm for every episode in the batch."""
        flipped = self._t >= self.flip_at
        return self.task_index ^ int(flipped)

    def _step(self, actions):
        arm = np.argmax(actions, axis=1)
        p = np.where(arm == self.good_arm(), self.p_good, self.p_bad)
        reward = (self._draws[:, self._t] < p).astype(np.float64)
        obs = np.zeros((len(arm), 3))
        obs[np.arange(len(arm)), arm] = 1.0
        obs[:, 2] = reward
        return obs, reward


BENCHMARKS = ("sphere", "rosenbrock")


def benchmark_eval(name: str, theta) -> float:
    """Negated sphere or Rosenbrock value (higher is better, optimum 0)."""
    return float(_benchmark(name, np.asarray(theta, dtype=np.float64)[None, :])[0])


def _benchmark(name: str, x: np.ndarray) -> np.ndarray:
    if name == "sphere":
        out = np.zeros(len(x))
        for i in range(x.shape[1]):
            out -= x[:, i] * x[:, i]
        return out
    if name == "rosenbrock":
        if x.shape[1] < 2:
            raise ContractError("rosenbrock needs dimension >= 2")
        out = np.zeros(len(x))
        for i in range(x.shape[1] - 1):
            out -= 100.0 * (x[:, i + 1] - x[:, i] ** 2) ** 2 + (1.0 - x[:, i]) ** 2
        return out
    raise ContractError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")


class Benchmark(Environment):
    """Single-step pseudo-environment scoring the action with a test function.

    ``shift`` translates the function by ``shift * ones`` so that an
    optimizer starting from the zero vector has work to do.
    """

    def __init__(self, function: str = "sphere", dim: int = 10, shift: float = 0.0):
        super().__init__()
        if function not in BENCHMARKS:
            raise ContractError(f"unknown benchmark {function!r}; expected one of {BENCHMARKS}")
        if function == "rosenbrock" and dim < 2:
            raise ContractError("rosenbrock needs dimension >= 2")
        self.function = function
        self.shift = shift
        self.spec = EnvSpec(0, dim, 1, function)

    def _reset(self, seeds):
        self.task_index = np.zeros(len(seeds), dtype=np.int64)
        return np.zeros((len(seeds), 0))

    def _step(self, actions):
        return np.zeros((len(actions), 0)), _benchmark(self.function, actions - self.shift)


ENVIRONMENTS = {
    "crippled_thruster": CrippledThruster,
    "bandit": NonstationaryBandit,
    "sphere": lambda **kw: Benchmark("sphere", **kw),
    "rosenbrock": lambda **kw: Benchmark("rosenbrock", **kw),
}


@dataclass(frozen=True)
class EnvFactory:
    """Picklable recipe for fresh environment instances."""

    name: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in ENVIRONMENTS:
            raise ContractError(
                f"unknown environment {self.name!r}; expected one of {sorted(ENVIRONMENTS)}"
            )

    def __call__(self) -> Environment:
        try:
            return ENVIRONMENTS[self.name](**self.params)
        except TypeError as exc:
            raise ContractError(f"bad parameters for {self.name}: {exc}") from exc

    def __hash__(self):
        return hash((self.name, tuple(sorted(self.params.items()))))


def make_env(name: str, **params) -> Environment:
    return EnvFactory(name, params)()


def rollout(thetas, template, env_factory, episode_seeds) -> tuple[np.ndarray, np.ndarray]:
    """Run every genome in ``thetas`` on every episode seed of its row.

    ``episode_seeds`` is either one seed list shared by all genomes or an
    array of shape (n_genomes, n_episodes). Traces persist within an episode
    and start from zero in each. Returns (returns, task_indices), both of
    shape (n_genomes, n_episodes).
    """
    from .plastic_net import BatchedNetwork

    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    n = thetas.shape[0]
    seeds = np.asarray(episode_seeds, dtype=np.uint64)
    if seeds.ndim == 1:
        seeds = np.broadcast_to(seeds, (n, seeds.size))
    if seeds.shape[0] != n or seeds.shape[1] < 1:
        raise ContractError(f"episode seeds of shape {seeds.shape} do not match {n} genomes")
    n_ep = seeds.shape[1]

    env = env_factory()
    if env.spec.obs_dim != template.sizes[0] or env.spec.action_dim != template.sizes[-1]:
        raise ContractError(
            f"network {template.sizes} does not fit {env.spec.name} "
            f"(obs_dim={env.spec.obs_dim}, action_dim={env.spec.action_dim})"
        )
    net = BatchedNetwork.from_flats(template, thetas).repeat(n_ep)
    obs = env.reset_batch([int(s) for s in seeds.ravel()])
    total = np.zeros(n * n_ep)
    done = False
    while not done:
        obs, reward, done = env.step_batch(net.step(obs))
        total += reward
    return total.reshape(n, n_ep), env.task_index.reshape(n, n_ep).copy()


def mean_over_episodes(returns: np.ndarray) -> np.ndarray:
    """Row means with a fixed left-to-right summation order."""
    returns = np.atleast_2d(returns)
    acc = np.zeros(returns.shape[0])
    for k in range(returns.shape[1]):
        acc += returns[:, k]
    return acc / returns.shape[1]


def evaluate_genome(theta, net_template, env_factory, episode_seeds) -> float:
    """Mean lifetime return of one genome over the given episode seeds."""
    returns, _ = rollout(np.asarray(theta)[None, :], net_template, env_factory, list(episode_seeds))
    return float(mean_over_episodes(returns)[0])
