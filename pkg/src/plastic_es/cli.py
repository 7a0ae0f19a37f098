"""Command-line entry point: train, eval, compare, bench."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .environments import EnvFactory, benchmark_eval
from .es_optimizer import EsConfig, train
from .persistence import (
    DEFAULT_EVAL_EPISODES,
    DEFAULT_EVAL_SEED,
    DEFAULT_MODELS,
    CheckpointError,
    ConfigError,
    load_checkpoint,
    load_config,
    run_comparison,
    run_training,
    static_twin,
    evaluate_policy,
    write_eval_outputs,
)
from .plastic_net import PlasticNetwork

logger = logging.getLogger("plastic_es")

# Benchmark suite: (function, dim, shift, generations, threshold on the best centre return)
BENCH_SUITE = [
    ("sphere", 10, 0.5, 300, -1e-3),
    ("rosenbrock", 2, 0.0, 2000, -1.0),
]


def _override_config(config, args):
    update = {}
    if getattr(args, "workers", None) is not None:
        update["workers"] = args.workers
    if getattr(args, "out_dir", None):
        update["out_dir"] = args.out_dir
    if getattr(args, "seed", None) is not None:
        update["es"] = config.es.model_copy(update={"master_seed": args.seed})
    return config.model_copy(update=update) if update else config


def cmd_train(args) -> int:
    if args.resume:
        config, state = load_checkpoint(args.resume)
        config = _override_config(config, args)
    else:
        config = _override_config(load_config(args.config), args)
        state = None
    state = run_training(config, state=state, stop_at=args.stop_at)
    last = state.log.records[-1] if len(state.log) else None
    print(
        f"trained {config.env} ({'plastic' if config.plastic else 'static'}) "
        f"to generation {state.generation}"
        + (f"; last mean return {last.mean_return:.4f}" if last else "")
    )
    print(f"checkpoint: {Path(config.out_dir) / 'checkpoint.json'}")
    return 0


def cmd_eval(args) -> int:
    config, state = load_checkpoint(args.checkpoint)
    report = evaluate_policy(config, state.theta, args.episodes, args.seeds_base)
    out_dir = args.out_dir or Path(args.checkpoint).parent
    json_path, csv_path = write_eval_outputs(report, out_dir)
    print(
        f"{report['episodes']} episodes: mean {report['mean_return']:.4f} "
        f"std {report['std_return']:.4f} min {report['min_return']:.4f} max {report['max_return']:.4f}"
    )
    for k, v in report["per_task"].items():
        print(f"  task {k}: {v['count']} episodes, mean {v['mean_return']:.4f}")
    print(f"report: {json_path}\nepisodes: {csv_path}")
    return 0


def cmd_compare(args) -> int:
    if args.config:
        config_sm = load_config(args.config).model_copy(update={"plastic": True})
        config_static = static_twin(config_sm)
    elif args.config_sm and args.config_static:
        config_sm, config_static = load_config(args.config_sm), load_config(args.config_static)
    else:
        raise ConfigError("compare needs --config, or both --config-sm and --config-static")
    out_dir = args.out_dir or str(Path(config_sm.out_dir) / "compare")
    summary = run_comparison(
        config_sm,
        config_static,
        out_dir,
        models=args.models,
        episodes=args.episodes,
        seed=args.seed,
        workers=args.workers,
        seeds_base=args.seeds_base,
    )
    for variant, v in summary["variants"].items():
        per = ", ".join(f"{m['mean_return']:.2f}" for m in v["per_model"])
        print(f"{variant:>6}: mean {v['mean_return']:.4f}  per model [{per}]")
    print(f"sm - static: {summary['sm_minus_static']:.4f}")
    print(f"outputs: {Path(out_dir) / 'compare.csv'}, {Path(out_dir) / 'compare_report.json'}")
    return 0


def bench_one(name, dim, shift, generations, threshold, workers: int = 1, seed: int = 0) -> dict:
    """Optimise one suite function from the zero vector and record the best centre value."""
    factory = EnvFactory(name, {"dim": dim, "shift": shift})
    template = PlasticNetwork.build([0, dim], plastic=False, activation="identity")
    config = EsConfig(
        population_size=50, sigma=0.1, learning_rate=0.05, iterations=generations,
        master_seed=seed, episodes_per_eval=1,
    )
    best = [benchmark_eval(name, np.zeros(dim) - shift)]

    def track(state):
        best[0] = max(best[0], benchmark_eval(name, state.theta - shift))

    theta, _ = train(config, factory, template, workers=workers, on_generation=track)
    return {
        "function": name, "dim": dim, "generations": generations, "best_return": best[0],
        "final_return": benchmark_eval(name, theta - shift), "threshold": threshold,
        "passed": best[0] > threshold,
    }


def run_bench(workers: int = 1, seed: int = 0) -> list[dict]:
    return [bench_one(*entry, workers=workers, seed=seed) for entry in BENCH_SUITE]


def cmd_bench(args) -> int:
    results = run_bench(workers=args.workers or 1, seed=args.seed or 0)
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        print(
            f"{status} {r['function']}-{r['dim']}d: best {r['best_return']:.3e} "
            f"(> {r['threshold']:g}) after {r['generations']} generations"
        )
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.out_dir) / "bench.json").write_text(json.dumps(results, indent=2))
    return 0 if all(r["passed"] for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plastic-es",
        description="Evolve neuromodulated plastic network policies with evolution strategies.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_help):
        p.add_argument("--workers", type=int, default=None, help="evaluation workers (0 = all cores)")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--seed", type=int, default=None, help=seed_help)

    p = sub.add_parser("train", help="train one policy from a TOML config")
    p.add_argument("--config")
    p.add_argument("--resume", metavar="CHECKPOINT", help="continue a run from its checkpoint")
    p.add_argument("--stop-at", type=int, default=None, help="stop after this many generations")
    common(p, "override the master seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on fresh episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=DEFAULT_EVAL_EPISODES)
    p.add_argument("--seeds-base", type=int, default=DEFAULT_EVAL_SEED)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and evaluate plastic vs static variants")
    p.add_argument("--config", help="plastic config; the static twin flips the plasticity flag")
    p.add_argument("--config-sm")
    p.add_argument("--config-static")
    p.add_argument("--models", type=int, default=DEFAULT_MODELS)
    p.add_argument("--episodes", type=int, default=DEFAULT_EVAL_EPISODES)
    p.add_argument("--seeds-base", type=int, default=DEFAULT_EVAL_SEED)
    common(p, "base master seed; model k uses seed + k")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="run the sphere/rosenbrock optimizer oracle suite")
    common(p, "master seed")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if args.command == "train" and not (args.config or args.resume):
        parser.error("train needs --config or --resume")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config:\n{exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
