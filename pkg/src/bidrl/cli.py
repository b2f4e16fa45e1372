"""Command-line entry point: train, eval, rollout, sweep, compare.

Exit codes: 0 success, 1 configuration error (bad flags, bad config keys,
incompatible checkpoints), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from . import harness
from .catfeeder import CapacityError
from .config import ConfigError, RunConfig
from .evaluation import evaluate, scaling_experiment, write_eval_report, write_sweep_csv
from .policy import CheckpointError, LayoutMismatchError, load_checkpoint
from .render import play_episode, write_rollout

CONFIG_ERRORS = (
    ConfigError,
    CapacityError,
    LayoutMismatchError,
    CheckpointError,
    harness.MissingCheckpointError,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are configuration errors
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default="paper", help="built-in profile: paper or desk")
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _resolve(args, method=None, run_name=None) -> RunConfig:
    file_cfg = config_mod.load_file(args.config) if args.config else None
    return config_mod.resolve(
        profile=args.profile,
        file_config=file_cfg,
        overrides=args.overrides,
        method=method,
        run_name=run_name,
        out_dir=getattr(args, "out", None),
    )


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x != "")


def cmd_train(args) -> int:
    cfg = _resolve(args, method=args.mode, run_name=args.name)
    if args.seeds:
        cfg = replace(cfg, train=replace(cfg.train, seeds=_parse_int_list(args.seeds)))
    run_dir = cfg.resolved_out_dir()
    harness.run_all_seeds(cfg, run_dir, reuse=not args.force)
    print(f"run directory: {run_dir}")
    return 0


def _env_auction_for_eval(args, metadata):
    """Env/auction under evaluation: checkpoint metadata unless a profile or
    config file or overrides say otherwise."""
    if args.config or args.overrides or args.profile != "paper":
        cfg = _resolve(args)
        return cfg.env, cfg.auction
    from .bidding import AuctionParams, PenaltyModel
    from .catfeeder import config_from_dict

    env = config_from_dict(metadata["env"])
    auc = metadata["auction"]
    params = AuctionParams(
        tau=auc["tau"],
        beta=auc["beta"],
        rho=auc["rho"],
        penalty_model=PenaltyModel(auc["penalty_model"]),
    )
    return env, params


def cmd_eval(args) -> int:
    ckpt_path = Path(args.ckpt)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    model, metadata = load_checkpoint(ckpt_path)
    env_cfg, params = _env_auction_for_eval(args, metadata)
    seeds = _parse_int_list(args.seeds) if args.seeds else config_mod.EvalConfig().seeds
    out = Path(args.out) if args.out else ckpt_path.parent / "eval"
    if args.targets:
        counts = list(_parse_int_list(args.targets))
        result = scaling_experiment(
            (model, metadata), counts, env_cfg, params, args.episodes, seeds=seeds
        )
        out.mkdir(parents=True, exist_ok=True)
        write_sweep_csv(result, out / "scaling.csv")
        for point in result.points:
            write_eval_report(point.report, out / f"targets_{point.value}")
        print(f"scaling results: {out / 'scaling.csv'}")
        return 0
    report = evaluate((model, metadata), env_cfg, params, args.episodes, seeds=seeds)
    write_eval_report(report, out)
    print(
        f"mean score {report.mean_score:.3f} +- {report.std_score:.3f} "
        f"over {report.episodes} episodes -> {out}"
    )
    return 0


def cmd_rollout(args) -> int:
    ckpt_path = Path(args.ckpt)
    if not ckpt_path.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    model, metadata = load_checkpoint(ckpt_path)
    env_cfg, params = _env_auction_for_eval(args, metadata)
    frames, records, score = play_episode(
        model, env_cfg, params, args.seed, max_steps=args.steps
    )
    out = Path(args.out) if args.out else ckpt_path.parent / f"rollout_{args.seed}"
    write_rollout(frames, records, out)
    print(f"episode score {score}; frames and trace in {out}")
    return 0


def cmd_sweep(args) -> int:
    grid = [v for v in args.grid.split(",") if v != ""]
    out = Path(args.out) if args.out else Path("sweeps") / args.param
    if args.param == "targets":
        if not args.ckpt:
            raise ConfigError("sweep --param targets needs --ckpt (no retraining)")
        cfg = _resolve(args)
        counts = [int(v) for v in grid]
        result = scaling_experiment(
            Path(args.ckpt), counts, cfg.env, cfg.auction,
            args.episodes or cfg.eval.episodes, seeds=cfg.eval.seeds,
        )
    elif args.param in harness.ABLATION_PARAMS:
        cfg = _resolve(args)
        typed = [
            float(v) if args.param == "bid_penalty" else int(v) for v in grid
        ]
        seeds = _parse_int_list(args.seeds) if args.seeds else None
        result = harness.ablation_sweep(
            cfg, args.param, typed, out, seeds=seeds, eval_episodes=args.episodes
        )
    else:
        raise ConfigError(
            f"unknown sweep parameter '{args.param}' "
            f"(valid: {sorted(harness.ABLATION_PARAMS) + ['targets']})"
        )
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(result, out / "sweep.csv")
    print(f"sweep results: {out / 'sweep.csv'}")
    return 0


def cmd_compare(args) -> int:
    rows = harness.compare_baselines(
        [Path(d) for d in args.runs], eval_episodes=args.episodes
    )
    out = Path(args.out) if args.out else Path("compare.csv")
    harness.write_compare_csv(rows, out)
    for row in rows:
        print(
            f"{row['method']}: {row['mean']:.3f} +- {row['std']:.3f} "
            f"({row['seeds']} seeds, {row['env_steps']} env steps)"
        )
    print(f"table: {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bidrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a method on a profile")
    _add_config_flags(p)
    p.add_argument("--mode", default=None, choices=sorted(config_mod.METHODS))
    p.add_argument("--name", default=None, help="run name (directory component)")
    p.add_argument("--out", default=None, help="output root (default $BIDRL_OUT or runs/)")
    p.add_argument("--seeds", default=None, help="comma-separated training seeds")
    p.add_argument("--force", action="store_true", help="retrain even if cached")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=16)
    p.add_argument("--seeds", default=None, help="comma-separated evaluation seeds")
    p.add_argument("--targets", default=None, help="scaling path: counts, e.g. 14 or 4,5,6")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rollout", help="play one greedy episode and render it")
    _add_config_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("sweep", help="ablation sweep (retrains) or target scaling")
    _add_config_flags(p)
    p.add_argument("--param", required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--ckpt", default=None, help="checkpoint for --param targets")
    p.add_argument("--seeds", default=None, help="training seeds for ablations")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="score table across trained run dirs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
