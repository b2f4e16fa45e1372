"""Experiment orchestration: run directories, ablation retraining, comparisons.

A single-seed run directory is flat (`config.lock`, `curve.csv`,
`ckpt_final.npz`); multi-seed runs hold `seed_<s>/` subdirectories plus a
top-level `config.lock`. `train_run` is idempotent: an existing directory with
a matching lock file is reused, so sweeps and the acceptance suite never
retrain what is already on disk.
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from .bidding import AuctionParams
from .config import RunConfig
from .evaluation import EvalReport, SweepPoint, SweepResult, evaluate
from .trainer import TrainResult, default_method_name, train

ABLATION_PARAMS = {
    "bid_upper_bound": "beta",
    "bid_penalty": "rho",
    "action_window": "tau",
}


class MissingCheckpointError(FileNotFoundError):
    pass


def single_seed_config(config: RunConfig, seed: int) -> RunConfig:
    return replace(config, train=replace(config.train, seeds=(int(seed),)))


def with_auction(config: RunConfig, **changes) -> RunConfig:
    """Replace auction parameters, keeping the bid head sized to the new beta."""
    auction = replace(config.auction, **changes)
    network = replace(config.network, bid_levels=auction.bid_levels)
    return replace(config, auction=auction, network=network)


def method_name(config: RunConfig) -> str:
    return default_method_name(config.train.mode, config.auction)


def train_run(
    config: RunConfig, seed: int, out_dir: Path, reuse: bool = True
) -> TrainResult | None:
    """Train one seed into `out_dir`; skip when a matching run already exists.

    Returns the TrainResult, or None when an existing run was reused.
    """
    out = Path(out_dir)
    lock_text = config_mod.to_yaml(single_seed_config(config, seed))
    lock_path = out / "config.lock"
    if (
        reuse
        and lock_path.exists()
        and (out / "ckpt_final.npz").exists()
        and (out / "curve.csv").exists()
        and lock_path.read_text() == lock_text
    ):
        return None
    out.mkdir(parents=True, exist_ok=True)
    lock_path.write_text(lock_text)
    return train(
        config.env,
        config.auction,
        config.network,
        config.train,
        seed,
        out_dir=out,
        method_name=method_name(config),
    )


def run_all_seeds(config: RunConfig, out_root: Path, reuse: bool = True) -> Path:
    """Lay out one run directory per the single/multi-seed convention."""
    out_root = Path(out_root)
    seeds = config.train.seeds
    if len(seeds) == 1:
        train_run(config, seeds[0], out_root, reuse=reuse)
    else:
        out_root.mkdir(parents=True, exist_ok=True)
        config_mod.write_lock(config, out_root / "config.lock")
        for seed in seeds:
            train_run(config, seed, out_root / f"seed_{seed}", reuse=reuse)
    return out_root


def seed_dirs(run_dir: Path) -> list[tuple[int, Path]]:
    """(seed, directory) pairs for both run-directory layouts."""
    run_dir = Path(run_dir)
    if (run_dir / "curve.csv").exists():
        cfg = config_mod.read_lock(run_dir / "config.lock")
        return [(cfg.train.seeds[0], run_dir)]
    out = []
    for sub in sorted(run_dir.glob("seed_*")):
        out.append((int(sub.name.split("_", 1)[1]), sub))
    if not out:
        raise MissingCheckpointError(f"{run_dir} holds no runs")
    return out


# -- ablations -----------------------------------------------------------------


def ablation_sweep(
    base_config: RunConfig,
    param: str,
    grid: list,
    out_root: Path,
    seeds: tuple[int, ...] | None = None,
    eval_episodes: int | None = None,
) -> SweepResult:
    """Retrain from scratch at every grid value (all else fixed) and evaluate.

    One training run per (grid point, seed); existing runs under `out_root`
    are reused.
    """
    if param not in ABLATION_PARAMS:
        raise ValueError(
            f"unknown ablation parameter '{param}' "
            f"(available: {sorted(ABLATION_PARAMS)})"
        )
    field = ABLATION_PARAMS[param]
    seeds = tuple(seeds) if seeds is not None else base_config.train.seeds[:3]
    episodes = eval_episodes or base_config.eval.episodes
    out_root = Path(out_root)

    points: list[SweepPoint] = []
    for value in grid:
        cfg = with_auction(base_config, **{field: value})
        for seed in seeds:
            run_dir = out_root / f"{param}_{value}" / f"seed_{seed}"
            train_run(cfg, seed, run_dir)
            report = evaluate(
                run_dir / "ckpt_final.npz",
                cfg.env,
                cfg.auction,
                episodes,
                seeds=cfg.eval.seeds,
            )
            points.append(SweepPoint(value=value, seed=seed, report=report))
    return SweepResult(param=param, grid=list(grid), points=points)


# -- baseline comparison ---------------------------------------------------------


def _env_signature(cfg: RunConfig) -> tuple:
    # shaping scale is part of the method (sparse vs shaped), not the dynamics
    env = config_mod.to_dict(cfg)["env"]
    env.pop("distance_reward_scale", None)
    return tuple(sorted(env.items()))


def compare_baselines(
    run_dirs: list[Path],
    eval_episodes: int | None = None,
) -> list[dict]:
    """Mean/std score per method over its training seeds, at equal env budgets.

    Every run directory must hold final checkpoints for all its seeds, train on
    the same environment, and consume exactly the same number of env steps;
    anything missing is reported by path.
    """
    entries = []
    missing: list[str] = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        lock = run_dir / "config.lock"
        if not lock.exists():
            missing.append(str(lock))
            continue
        cfg = config_mod.read_lock(lock)
        per_seed = []
        for seed, sdir in seed_dirs(run_dir):
            ckpt = sdir / "ckpt_final.npz"
            if not ckpt.exists():
                missing.append(str(ckpt))
                continue
            per_seed.append((seed, ckpt))
        entries.append((cfg, per_seed))
    if missing:
        raise MissingCheckpointError(
            "missing checkpoints: " + ", ".join(sorted(missing))
        )

    budgets = {cfg.env_steps_budget for cfg, _ in entries}
    if len(budgets) > 1:
        raise ValueError(
            f"env-step budgets differ across methods: {sorted(budgets)}"
        )
    if len({_env_signature(cfg) for cfg, _ in entries}) > 1:
        raise ValueError("methods were trained on different environments")

    rows = []
    for cfg, per_seed in entries:
        episodes = eval_episodes or cfg.eval.episodes
        seed_means = []
        for _, ckpt in per_seed:
            report = evaluate(
                ckpt, cfg.env, cfg.auction, episodes, seeds=cfg.eval.seeds
            )
            seed_means.append(report.mean_score)
        rows.append(
            {
                "method": method_name(cfg),
                "mean": float(np.mean(seed_means)),
                "std": float(np.std(seed_means)),
                "seeds": len(seed_means),
                "env_steps": cfg.env_steps_budget,
            }
        )
    return rows


def write_compare_csv(rows: list[dict], path: Path) -> None:
    lines = ["method,mean,std,seeds,env_steps"]
    for row in rows:
        lines.append(
            f"{row['method']},{row['mean']!r},{row['std']!r},"
            f"{row['seeds']},{row['env_steps']}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def seed_mean_scores(
    run_dir: Path, eval_episodes: int | None = None
) -> dict[int, float]:
    """Per-training-seed mean evaluation score for one run directory."""
    cfg = config_mod.read_lock(Path(run_dir) / "config.lock")
    episodes = eval_episodes or cfg.eval.episodes
    out: dict[int, float] = {}
    for seed, sdir in seed_dirs(run_dir):
        report = evaluate(
            sdir / "ckpt_final.npz", cfg.env, cfg.auction, episodes, seeds=cfg.eval.seeds
        )
        out[seed] = report.mean_score
    return out


# re-exported names used by the CLI
__all__ = [
    "ABLATION_PARAMS",
    "AuctionParams",
    "EvalReport",
    "MissingCheckpointError",
    "ablation_sweep",
    "compare_baselines",
    "method_name",
    "run_all_seeds",
    "seed_dirs",
    "seed_mean_scores",
    "single_seed_config",
    "train_run",
    "with_auction",
    "write_compare_csv",
]
