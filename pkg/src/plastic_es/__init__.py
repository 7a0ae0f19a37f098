"""Evolution strategies for neuromodulated plastic network policies."""

from .environments import (
    Benchmark,
    CrippledThruster,
    EnvFactory,
    EnvSpec,
    NonstationaryBandit,
    StepResult,
    benchmark_eval,
    evaluate_genome,
    make_env,
)
from .es_optimizer import (
    EsConfig,
    Population,
    TrainLog,
    centered_ranks,
    episode_seed_schedule,
    perturbation,
    train,
    update,
)
from .eval_engine import evaluate_generation
from .plastic_net import ContractError, PlasticLayer, PlasticNetwork

__version__ = "0.1.0"
