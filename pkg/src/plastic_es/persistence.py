"""Run configuration, checkpoints and the evaluation/comparison protocols."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Literal

import numpy as np
import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .environments import ENVIRONMENTS, EnvFactory, rollout
from .es_optimizer import EsConfig, TrainLog, TrainState, record_row, train
from .plastic_net import GENOME_LAYOUT_VERSION, PlasticNetwork

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "plastic-es-checkpoint"
CHECKPOINT_VERSION = 1
DEFAULT_EVAL_EPISODES = 100
DEFAULT_MODELS = 5
DEFAULT_EVAL_SEED = 20_240_601
_EVAL_TAG = 0xE7A1


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class EsSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    population_size: int = Field(50, ge=1)
    sigma: float = Field(0.1, ge=0)
    learning_rate: float = Field(0.05, ge=0)
    iterations: int = Field(300, ge=0)
    master_seed: int = Field(0, ge=0, lt=2**64)
    mirrored: bool = True
    rank_shaping: bool = True
    weight_decay: float = Field(0.0, ge=0)
    momentum: float = Field(0.0, ge=0, lt=1)


class RunConfig(BaseModel):
    """Everything that defines a run. Unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    env: str
    env_params: dict[str, Any] = Field(default_factory=dict)
    hidden: list[int] = Field(default_factory=list)
    plastic: bool = True
    activation: Literal["tanh", "identity", "relu"] = "tanh"
    bias: bool = True
    omega: float = Field(1.0, gt=0)
    episodes_per_eval: int = Field(3, ge=1)
    common_random_numbers: bool = True
    es: EsSection = Field(default_factory=EsSection)
    workers: int = Field(1, ge=0)
    checkpoint_every: int = Field(50, ge=1)
    out_dir: str = "runs/default"

    @field_validator("env")
    @classmethod
    def _known_env(cls, v):
        if v not in ENVIRONMENTS:
            raise ValueError(f"unknown environment {v!r}; expected one of {sorted(ENVIRONMENTS)}")
        return v

    @field_validator("hidden")
    @classmethod
    def _positive_widths(cls, v):
        if any(h < 1 for h in v):
            raise ValueError("hidden layer widths must be positive")
        return v

    def env_factory(self) -> EnvFactory:
        return EnvFactory(self.env, dict(self.env_params))

    def network(self) -> PlasticNetwork:
        spec = self.env_factory()().spec
        return PlasticNetwork.build(
            [spec.obs_dim, *self.hidden, spec.action_dim],
            plastic=self.plastic,
            activation=self.activation,
            use_bias=self.bias,
            omega=self.omega,
        )

    def es_config(self) -> EsConfig:
        return EsConfig(
            **self.es.model_dump(),
            episodes_per_eval=self.episodes_per_eval,
            common_random_numbers=self.common_random_numbers,
        )

    def digest(self) -> str:
        """Hash of every field that affects results (not out_dir/workers/cadence)."""
        payload = self.model_dump(exclude={"out_dir", "workers", "checkpoint_every"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "\n".join(lines)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data)


# -- checkpoints --------------------------------------------------------------


def _encode(arr) -> list[str] | None:
    return None if arr is None else [float(v).hex() for v in np.asarray(arr).ravel()]


def _decode(values) -> np.ndarray | None:
    return None if values is None else np.array([float.fromhex(v) for v in values], dtype=np.float64)


def save_checkpoint(path, config: RunConfig, state: TrainState) -> None:
    """Write a JSON checkpoint; genome floats are stored as exact hex strings."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "genome_layout": GENOME_LAYOUT_VERSION,
        "config_digest": config.digest(),
        "generation": state.generation,
        "genome_size": int(state.theta.size),
        "theta_norm": float(np.linalg.norm(state.theta)),
        "config": config.model_dump(),
        "theta": _encode(state.theta),
        "velocity": _encode(state.velocity),
        "train_log": state.log.to_dicts(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[RunConfig, TrainState]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION or doc.get("genome_layout") != GENOME_LAYOUT_VERSION:
        raise CheckpointError(
            f"{path} has format version {doc.get('version')} / genome layout "
            f"{doc.get('genome_layout')}; this build reads version {CHECKPOINT_VERSION} / "
            f"layout {GENOME_LAYOUT_VERSION}"
        )
    config = parse_config(doc["config"])
    theta = _decode(doc["theta"])
    if theta.size != config.network().genome_size:
        raise CheckpointError(f"{path}: genome length {theta.size} does not match its config")
    state = TrainState(
        generation=int(doc["generation"]),
        theta=theta,
        log=TrainLog.from_dicts(doc["train_log"]),
        velocity=_decode(doc.get("velocity")),
    )
    return config, state


# -- training -------------------------------------------------------------------


class _CsvLog:
    """Appends TrainLog rows as generations complete."""

    def __init__(self, path: Path, existing: TrainLog):
        self.path = path
        existing.write_csv(path)
        self.written = len(existing)

    def flush(self, log: TrainLog) -> None:
        with open(self.path, "a", newline="") as fh:
            writer = csv.writer(fh)
            for r in log.records[self.written :]:
                writer.writerow(record_row(r))
        self.written = len(log)


def run_training(
    config: RunConfig,
    out_dir=None,
    workers: int | None = None,
    state: TrainState | None = None,
    stop_at: int | None = None,
) -> TrainState:
    """Train per ``config``, checkpointing and logging into ``out_dir``."""
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    template = config.network()
    es = config.es_config()
    if state is None:
        state = TrainState(0, np.zeros(template.genome_size), TrainLog())
    csv_log = _CsvLog(out / "train_log.csv", state.log)
    ckpt = out / "checkpoint.json"

    def on_generation(s: TrainState) -> None:
        csv_log.flush(s.log)
        if s.generation % config.checkpoint_every == 0:
            save_checkpoint(ckpt, config, s)

    train(
        es,
        config.env_factory(),
        template,
        workers=config.workers if workers is None else workers,
        state=state,
        on_generation=on_generation,
        stop_at=stop_at,
    )
    save_checkpoint(ckpt, config, state)
    logger.info("trained %s to generation %d -> %s", config.env, state.generation, ckpt)
    return state


# -- evaluation protocol --------------------------------------------------------


def eval_seeds(seeds_base: int, episodes: int) -> list[int]:
    ss = np.random.SeedSequence([seeds_base, _EVAL_TAG])
    return [int(s) for s in ss.generate_state(episodes, dtype=np.uint64)]


def evaluate_policy(
    config: RunConfig, theta, episodes: int = DEFAULT_EVAL_EPISODES, seeds_base: int = DEFAULT_EVAL_SEED
) -> dict:
    """Roll ``episodes`` fresh episodes and summarise the returns."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = eval_seeds(seeds_base, episodes)
    returns, tasks = rollout(np.asarray(theta)[None, :], config.network(), config.env_factory(), seeds)
    returns, tasks = returns[0], tasks[0]
    per_task = {}
    for k in sorted(set(tasks.tolist())):
        mask = tasks == k
        per_task[str(k)] = {"count": int(mask.sum()), "mean_return": float(returns[mask].mean())}
    return {
        "env": config.env,
        "plastic": config.plastic,
        "config_digest": config.digest(),
        "episodes": int(episodes),
        "seeds_base": int(seeds_base),
        "mean_return": float(returns.mean()),
        "std_return": float(returns.std()),
        "min_return": float(returns.min()),
        "max_return": float(returns.max()),
        "per_task": per_task,
        "per_episode": [
            {"episode": i, "seed": s, "task_index": int(t), "return": float(r)}
            for i, (s, t, r) in enumerate(zip(seeds, tasks, returns))
        ],
    }


EPISODE_CSV_HEADER = ["episode", "seed", "task_index", "return"]


def write_eval_outputs(report: dict, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = out / "eval_report.json", out / "eval_episodes.csv"
    summary = {k: v for k, v in report.items() if k != "per_episode"}
    json_path.write_text(json.dumps(summary, indent=2))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPISODE_CSV_HEADER)
        for row in report["per_episode"]:
            writer.writerow([row[k] for k in EPISODE_CSV_HEADER])
    return json_path, csv_path


# -- SM vs static comparison ------------------------------------------------------

COMPARE_CSV_HEADER = ["row_type", "variant", "model", "master_seed", "episode", "task_index", "return"]


def static_twin(config: RunConfig) -> RunConfig:
    return config.model_copy(update={"plastic": False})


def check_comparable(config_sm: RunConfig, config_static: RunConfig) -> None:
    if not config_sm.plastic or config_static.plastic:
        raise ConfigError("compare needs a plastic config and a static config")
    skip = {"plastic", "out_dir"}
    a = config_sm.model_dump(exclude=skip)
    b = config_static.model_dump(exclude=skip)
    diff = sorted(k for k in a if a[k] != b[k])
    if diff:
        raise ConfigError(f"configs differ beyond the plasticity flag: {', '.join(diff)}")


def run_comparison(
    config_sm: RunConfig,
    config_static: RunConfig,
    out_dir,
    models: int = DEFAULT_MODELS,
    episodes: int = DEFAULT_EVAL_EPISODES,
    seed: int | None = None,
    workers: int | None = None,
    seeds_base: int = DEFAULT_EVAL_SEED,
) -> dict:
    """Train ``models`` runs per variant under distinct master seeds and evaluate each."""
    check_comparable(config_sm, config_static)
    if models < 1 or episodes < 1:
        raise ValueError("models and episodes must be >= 1")
    out = Path(out_dir)
    base_seed = config_sm.es.master_seed if seed is None else seed
    rows: list[list] = []
    summary: dict[str, Any] = {
        "env": config_sm.env,
        "models": models,
        "episodes": episodes,
        "config_digest": {"sm": config_sm.digest(), "static": config_static.digest()},
        "variants": {},
    }
    for variant, cfg in (("sm", config_sm), ("static", config_static)):
        model_means = []
        per_model = []
        for k in range(models):
            master_seed = (base_seed + k) % 2**64
            run_cfg = cfg.model_copy(
                update={"es": cfg.es.model_copy(update={"master_seed": master_seed})}
            )
            state = run_training(run_cfg, out_dir=out / variant / f"model_{k}", workers=workers)
            report = evaluate_policy(run_cfg, state.theta, episodes, seeds_base)
            for ep in report["per_episode"]:
                rows.append(["episode", variant, k, master_seed, ep["episode"], ep["task_index"], ep["return"]])
            rows.append(["model_mean", variant, k, master_seed, "", "", report["mean_return"]])
            model_means.append(report["mean_return"])
            per_model.append(
                {"model": k, "master_seed": master_seed, "mean_return": report["mean_return"],
                 "std_return": report["std_return"], "per_task": report["per_task"]}
            )
            logger.info("%s model %d: mean return %.3f", variant, k, report["mean_return"])
        mean = float(np.mean(model_means))
        rows.append(["variant_mean", variant, "", "", "", "", mean])
        summary["variants"][variant] = {"mean_return": mean, "per_model": per_model}
    summary["sm_minus_static"] = (
        summary["variants"]["sm"]["mean_return"] - summary["variants"]["static"]["mean_return"]
    )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_CSV_HEADER)
        writer.writerows(rows)
    (out / "compare_report.json").write_text(json.dumps(summary, indent=2))
    return summary

