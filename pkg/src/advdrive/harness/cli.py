"""``advdrive`` command line.

Every command resolves the configuration (defaults, ``--config`` file,
``--set section.key=value`` overrides, ``--seed``, ``--out``), takes an
exclusive lock on its output directory and writes ``config.yaml`` next to its
results. Output layout under the output root::

    ego_ppo/ adversary_td3/ robust_ppo/     config.yaml metrics.csv episodes.csv final.ckpt
                                            checkpoints/step_<env_steps>.ckpt
    eval-<tag>/                             config.yaml metrics.csv episodes.csv summary.json
    rollout/                                config.yaml (trace goes to --trace)
    comparison.json                         written by run-all

Exit codes: 0 success, 2 configuration error, 3 checkpoint error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from advdrive.env.trace import write_trace
from advdrive.errors import CheckpointError, ConfigError, NumericError, NumericInputError
from advdrive.harness.checkpoint import EGO_ROLES, Checkpoint, load_checkpoint, save_checkpoint
from advdrive.harness.config import RunConfig, dump_config, fingerprint, load_config
from advdrive.harness.metrics import write_episodes, write_metrics
from advdrive.pipeline import (
    STAGES,
    EvalReport,
    StageSpec,
    compare_reports,
    evaluate_policy,
    rollout_episode,
    run_stage,
)

log = logging.getLogger("advdrive")

EXIT_OK, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_NUMERIC = 0, 2, 3, 4


def stage_seed(seed: int, stage: str) -> int:
    return int(np.random.SeedSequence([seed, STAGES.index(stage)]).generate_state(1)[0])


@contextmanager
def locked(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out_dir / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise ConfigError(f"output directory {out_dir} is in use by another run") from None
    try:
        yield out_dir
    finally:
        lock.release()


def _snapshot(cfg: RunConfig, out_dir: Path):
    (out_dir / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")


def train(cfg: RunConfig, stage: str, ego: Checkpoint | None = None, adversary: Checkpoint | None = None) -> Checkpoint:
    settings = getattr(cfg.stages, stage)
    spec = StageSpec(
        stage=stage, env=cfg.env, driver=cfg.driver, learner=cfg.td3 if stage == "adversary_td3" else cfg.ppo,
        total_steps=settings.total_steps, checkpoint_interval=settings.checkpoint_interval,
        log_interval=settings.log_interval, seed=stage_seed(cfg.seed, stage), ego=ego, adversary=adversary,
        config_fingerprint=fingerprint(cfg),
    )
    with locked(cfg.output_root() / stage) as out_dir:
        _snapshot(cfg, out_dir)

        def on_checkpoint(steps, ckpt):
            save_checkpoint(ckpt, out_dir / "checkpoints" / f"step_{steps:09d}.ckpt")

        result = run_stage(spec, on_checkpoint)
        save_checkpoint(result.checkpoint, out_dir / "final.ckpt")
        write_metrics(result.curve, out_dir / "metrics.csv")
        write_episodes(result.episodes, out_dir / "episodes.csv")
    log.info("%s finished: %d episodes, checkpoint %s", stage, len(result.episodes), out_dir / "final.ckpt")
    return result.checkpoint


def evaluate(cfg: RunConfig, ego: Checkpoint, adversary: Checkpoint | None, tag: str) -> EvalReport:
    report = evaluate_policy(ego, adversary, cfg.env, cfg.eval.episodes, cfg.eval.seed, cfg.driver)
    with locked(cfg.output_root() / f"eval-{tag}") as out_dir:
        _snapshot(cfg, out_dir)
        write_metrics([report.as_metrics_row()], out_dir / "metrics.csv")
        write_episodes(report.rows, out_dir / "episodes.csv")
        summary = {k: v for k, v in asdict(report).items() if k != "rows"}
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


def _cmd_train_ego(cfg, args):
    train(cfg, "ego_ppo")


def _cmd_train_adversary(cfg, args):
    train(cfg, "adversary_td3", ego=load_checkpoint(args.ego, EGO_ROLES))


def _cmd_train_robust(cfg, args):
    ego = load_checkpoint(args.ego, EGO_ROLES) if args.ego and cfg.stages.robust_ppo.warm_start else None
    train(cfg, "robust_ppo", ego=ego, adversary=load_checkpoint(args.adversary, "adversary_td3"))


def _cmd_evaluate(cfg, args):
    adversary = load_checkpoint(args.adversary, "adversary_td3") if args.adversary else None
    tag = args.tag or ("adversary" if adversary is not None else "rule")
    report = evaluate(cfg, load_checkpoint(args.ego, EGO_ROLES), adversary, tag)
    print(json.dumps({k: v for k, v in asdict(report).items() if k != "rows"}, sort_keys=True))


def _cmd_rollout(cfg, args):
    adversary = load_checkpoint(args.adversary, "adversary_td3") if args.adversary else None
    records, row = rollout_episode(load_checkpoint(args.ego, EGO_ROLES), adversary, cfg.env, args.episode_seed,
                                   cfg.driver)
    with locked(cfg.output_root() / "rollout") as out_dir:
        _snapshot(cfg, out_dir)
        write_trace(records, args.trace)
    print(json.dumps({"steps": row.length, "return": row.episode_return, "ego_collided": row.ego_collided}))


def _cmd_plot(cfg, args):
    from advdrive.harness.plot import plot_curves

    for path in args.csv:
        if not Path(path).is_file():
            raise ConfigError(f"metrics file {path} does not exist")
    print(plot_curves(args.csv, args.output, args.label))


def _cmd_run_all(cfg, args):
    ego = train(cfg, "ego_ppo")
    adversary = train(cfg, "adversary_td3", ego=ego)
    robust = train(cfg, "robust_ppo", ego=ego if cfg.stages.robust_ppo.warm_start else None, adversary=adversary)
    rule = evaluate(cfg, ego, None, "ego-rule")
    attacked = evaluate(cfg, ego, adversary, "ego-adversary")
    defended = evaluate(cfg, robust, adversary, "robust-adversary")
    result = {"degradation": compare_reports(attacked, rule), "recovery": compare_reports(attacked, defended)}
    path = cfg.output_root() / "comparison.json"
    path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(result, sort_keys=True))


def _global_flags(parser: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="YAML run configuration")
    parser.add_argument("--seed", type=int, default=default, help="master seed (overrides the config)")
    parser.add_argument("--out", default=default, help="output root (default: $ADVDRIVE_OUT or ./runs)")
    parser.add_argument("--set", dest="overrides", action="append", default=argparse.SUPPRESS if suppress else [],
                        metavar="KEY=VALUE", help="override one config value, e.g. env.lane_count=3")
    parser.add_argument("-q", "--quiet", action="store_true", default=default, help="only log warnings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advdrive", description="Adversarial training for highway driving agents.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.set_defaults(func=fn)
        return p

    add("train-ego", _cmd_train_ego, "stage 1: PPO ego against rule-based traffic")
    p = add("train-adversary", _cmd_train_adversary, "stage 2: TD3 adversary against a frozen ego")
    p.add_argument("--ego", required=True, help="ego checkpoint")
    p = add("train-robust", _cmd_train_robust, "stage 3: PPO ego against a frozen adversary")
    p.add_argument("--adversary", required=True, help="adversary checkpoint")
    p.add_argument("--ego", help="ego checkpoint to warm start from")
    p = add("evaluate", _cmd_evaluate, "seeded evaluation of an ego policy")
    p.add_argument("--ego", required=True)
    p.add_argument("--adversary")
    p.add_argument("--episodes", type=int, help="number of episodes (overrides eval.episodes)")
    p.add_argument("--tag", help="name of the eval-<tag> output directory")
    p = add("rollout", _cmd_rollout, "write a JSONL trace of one episode")
    p.add_argument("--ego", required=True)
    p.add_argument("--adversary")
    p.add_argument("--trace", required=True, help="output JSONL path")
    p.add_argument("--episode-seed", type=int, default=0)
    p = add("plot", _cmd_plot, "render training curves from metrics CSVs to SVG")
    p.add_argument("--csv", action="append", required=True, help="metrics CSV (repeatable)")
    p.add_argument("--label", action="append", help="legend label per CSV")
    p.add_argument("--output", default="curves.svg")
    add("run-all", _cmd_run_all, "all three stages plus the comparison evaluations")
    return parser


def resolve(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "episodes", None) is not None:
        overrides.append(f"eval.episodes={args.episodes}")
    cfg = load_config(args.config, overrides)
    if args.out is not None:
        cfg = replace(cfg, out=str(args.out))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
        args.func(cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (NumericError, NumericInputError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
