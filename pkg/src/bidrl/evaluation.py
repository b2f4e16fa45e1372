"""Evaluation: greedy episode scoring, control/bid statistics, scaling sweeps.

The score of an episode is the number of feeding requests completed minus the
number that expired. Evaluation plays argmax actions and bids (ties to the
lowest index) unless sampling is requested, runs episodes as independent
vectorized instances, and aggregates deterministically in instance order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bidding import AuctionParams
from .catfeeder import CatFeederConfig
from .policy import (
    ActorCritic,
    LayoutMismatchError,
    ObsBatch,
    greedy_policy,
    load_checkpoint,
    sample_policy,
)
from .vecenv import VecBiddingGame, VecCatFeeder, VecSingleEnv

DEFAULT_SEEDS = (1825, 410, 4507, 4013, 3658)


@dataclass
class AuctionRecord:
    episode: int
    step: int
    bids: tuple[int, ...]
    winner: int
    forced: bool

    def as_json(self) -> str:
        return json.dumps(
            {
                "episode": self.episode,
                "step": self.step,
                "bids": list(self.bids),
                "winner": self.winner,
                "forced": self.forced,
            }
        )


@dataclass
class EvalReport:
    per_seed_scores: dict[int, list[float]]
    mean_score: float
    std_score: float
    episodes: int
    env_config: dict
    control_histogram: np.ndarray  # timesteps controlled per agent slot
    bid_histogram: np.ndarray  # (agents, bid levels) counts at auctions
    auction_count: int
    forced_reauction_count: int
    auction_records: list[AuctionRecord] = field(default_factory=list)

    @property
    def total_timesteps(self) -> int:
        return int(self.control_histogram.sum())


def _episode_rngs(seed: int, episodes: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(episodes)]


def _batch_from_arrays(direct, comp, mask) -> ObsBatch:
    e, a = direct.shape[0], direct.shape[1]
    return ObsBatch(
        direct=direct.reshape(e * a, -1).astype(np.float32),
        competitors=comp.reshape(e * a, comp.shape[2], 4).astype(np.float32),
        mask=mask.reshape(e * a, -1),
    )


def run_bidding_episodes(
    model: ActorCritic,
    env_config: CatFeederConfig,
    params: AuctionParams,
    episodes: int,
    seed: int,
    greedy: bool = True,
    episode_offset: int = 0,
    record_auctions: bool = True,
):
    """Play `episodes` independent bidding-game episodes.

    Returns (scores (episodes,), control_hist (m,), bid_hist (m, beta+1),
    auction_count, forced_count, auction_records).
    """
    rngs = _episode_rngs(seed, episodes)
    sample_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, 1]))
    )
    game = VecBiddingGame(VecCatFeeder(env_config, episodes, rngs), params)
    game.reset_all()
    m = game.num_agents

    finished = np.zeros(episodes, dtype=bool)
    fed_count = np.zeros(episodes, dtype=np.int64)
    expired_count = np.zeros(episodes, dtype=np.int64)
    control_hist = np.zeros(m, dtype=np.int64)
    bid_hist = np.zeros((m, params.bid_levels), dtype=np.int64)
    auction_count = 0
    forced_count = 0
    records: list[AuctionRecord] = []

    for step in range(env_config.max_episode_steps):
        direct, comp, mask = game.observations()
        batch = _batch_from_arrays(direct, comp, mask)
        if greedy:
            actions, bids = greedy_policy(model, batch)
        else:
            res = sample_policy(model, batch, sample_rng)
            actions, bids = res.actions, res.bids
        actions = actions.reshape(episodes, m)
        bids = (
            bids.reshape(episodes, m)
            if bids is not None
            else np.zeros((episodes, m), dtype=np.int64)
        )
        live = game.live_mask()
        out = game.step(actions, bids)

        active = ~finished
        fed_count[active] += out.fed[active].sum(axis=1)
        expired_count[active] += out.expired[active].sum(axis=1)
        np.add.at(control_hist, out.executed[active], 1)
        held = active & out.auction_held
        auction_count += int(held.sum())
        forced_count += int((held & out.forced).sum())
        for e in np.flatnonzero(held):
            for i in np.flatnonzero(live[e]):
                bid_hist[i, bids[e, i]] += 1
            if record_auctions:
                records.append(
                    AuctionRecord(
                        episode=episode_offset + int(e),
                        step=step,
                        bids=tuple(int(b) for b in bids[e][live[e]]),
                        winner=int(out.executed[e]),
                        forced=bool(out.forced[e]),
                    )
                )
        finished |= out.done
        if finished.all():
            break

    scores = (fed_count - expired_count).astype(np.float64)
    return scores, control_hist, bid_hist, auction_count, forced_count, records


def run_single_episodes(
    model: ActorCritic,
    env_config: CatFeederConfig,
    episodes: int,
    seed: int,
    greedy: bool = True,
) -> tuple[np.ndarray, int]:
    """Score episodes for a monolithic-baseline policy (no auctions).

    Returns (scores, total timesteps played across the episodes).
    """
    rngs = _episode_rngs(seed, episodes)
    sample_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, 1]))
    )
    env = VecSingleEnv(env_config, episodes, rngs)
    env.reset_all()
    finished = np.zeros(episodes, dtype=bool)
    fed_count = np.zeros(episodes, dtype=np.int64)
    expired_count = np.zeros(episodes, dtype=np.int64)
    total_steps = 0
    for _ in range(env_config.max_episode_steps):
        flat = env.observations()
        batch = ObsBatch(
            direct=flat.astype(np.float32),
            competitors=np.zeros((episodes, 0, 4), dtype=np.float32),
            mask=np.zeros((episodes, 0), dtype=bool),
        )
        if greedy:
            actions, _ = greedy_policy(model, batch)
        else:
            actions = sample_policy(model, batch, sample_rng).actions
        _, fed, expired, done = env.step(actions)
        active = ~finished
        total_steps += int(active.sum())
        fed_count[active] += fed[active].sum(axis=1)
        expired_count[active] += expired[active].sum(axis=1)
        finished |= done
        if finished.all():
            break
    return (fed_count - expired_count).astype(np.float64), total_steps


def quick_scores(
    model: ActorCritic,
    env_config: CatFeederConfig,
    params: AuctionParams,
    episodes: int,
    seed: int,
    single: bool = False,
    greedy: bool = True,
) -> np.ndarray:
    """Per-episode scores only (the trainer's in-loop evaluation)."""
    if single:
        scores, _ = run_single_episodes(
            model, env_config, episodes, seed, greedy=greedy
        )
        return scores
    scores, *_ = run_bidding_episodes(
        model, env_config, params, episodes, seed, greedy=greedy, record_auctions=False
    )
    return scores


def check_compatibility(
    model: ActorCritic,
    metadata: dict,
    env_config: CatFeederConfig,
    params: AuctionParams,
) -> bool:
    """Raise LayoutMismatchError unless the checkpoint fits this env/auction.

    Returns True for bidding checkpoints, False for single-policy ones.
    """
    from .trainer import TrainMode, build_layout

    mode = TrainMode(metadata.get("mode", TrainMode.MULTI_AGENT_BIDDING.value))
    expected = build_layout(env_config, model.config, mode)
    if model.layout != expected:
        raise LayoutMismatchError(
            f"checkpoint layout {model.layout} does not fit this environment "
            f"(expected {expected})"
        )
    if not mode.is_single and model.config.bid_levels != params.bid_levels:
        raise LayoutMismatchError(
            f"checkpoint bid head has {model.config.bid_levels} levels, "
            f"auction needs {params.bid_levels}"
        )
    return not mode.is_single


def evaluate(
    checkpoint,
    env_config: CatFeederConfig,
    auction_params: AuctionParams,
    episodes: int,
    seeds: tuple[int, ...] = DEFAULT_SEEDS,
    greedy: bool = True,
) -> EvalReport:
    """Aggregate greedy evaluation over `episodes` per seed.

    `checkpoint` is a path or an (ActorCritic, metadata) pair. Mean/std pool
    every episode across seeds; per-seed score lists stay available.
    """
    env_config.validate()
    if isinstance(checkpoint, (str, Path)):
        model, metadata = load_checkpoint(checkpoint)
    else:
        model, metadata = checkpoint
    is_bidding = check_compatibility(model, metadata, env_config, auction_params)

    m = env_config.num_targets
    per_seed: dict[int, list[float]] = {}
    control_hist = np.zeros(m if is_bidding else 1, dtype=np.int64)
    bid_hist = np.zeros((m, auction_params.bid_levels), dtype=np.int64)
    auction_count = 0
    forced_count = 0
    records: list[AuctionRecord] = []
    offset = 0
    for seed in seeds:
        if is_bidding:
            scores, ch, bh, ac, fc, recs = run_bidding_episodes(
                model,
                env_config,
                auction_params,
                episodes,
                seed,
                greedy=greedy,
                episode_offset=offset,
            )
            control_hist += ch
            bid_hist += bh
            auction_count += ac
            forced_count += fc
            records.extend(recs)
        else:
            scores, steps_played = run_single_episodes(
                model, env_config, episodes, seed, greedy=greedy
            )
            control_hist[0] += steps_played
        per_seed[int(seed)] = [float(s) for s in scores]
        offset += episodes

    all_scores = np.concatenate([np.asarray(v) for v in per_seed.values()])
    return EvalReport(
        per_seed_scores=per_seed,
        mean_score=float(all_scores.mean()),
        std_score=float(all_scores.std()),
        episodes=int(all_scores.size),
        env_config={
            f: getattr(env_config, f) for f in CatFeederConfig.__dataclass_fields__
        },
        control_histogram=control_hist,
        bid_histogram=bid_hist,
        auction_count=auction_count,
        forced_reauction_count=forced_count,
        auction_records=records,
    )


# -- scaling ---------------------------------------------------------------------


@dataclass
class SweepPoint:
    value: object
    seed: int | None
    report: EvalReport


@dataclass
class SweepResult:
    param: str
    grid: list
    points: list[SweepPoint]

    def rows(self) -> list[dict]:
        out = []
        for p in self.points:
            out.append(
                {
                    "param": self.param,
                    "value": p.value,
                    "seed": "" if p.seed is None else p.seed,
                    "mean_score": p.report.mean_score,
                    "std_score": p.report.std_score,
                    "episodes": p.report.episodes,
                }
            )
        return out


def scaling_experiment(
    checkpoint,
    target_counts: list[int],
    base_env_config: CatFeederConfig,
    auction_params: AuctionParams,
    episodes: int,
    seeds: tuple[int, ...] = DEFAULT_SEEDS,
) -> SweepResult:
    """Evaluate one trained checkpoint at different live-target counts.

    No retraining: the same shared parameters serve every policy copy. Only the
    target count changes; expiry/movement parameters stay at training values.
    """
    if isinstance(checkpoint, (str, Path)):
        loaded = load_checkpoint(checkpoint)
    else:
        loaded = checkpoint
    model, metadata = loaded
    points = []
    for count in target_counts:
        env_cfg = replace(base_env_config, num_targets=count)
        env_cfg.validate()  # CapacityError if the grid cannot host them
        report = evaluate(
            (model, metadata), env_cfg, auction_params, episodes, seeds=seeds
        )
        points.append(SweepPoint(value=count, seed=None, report=report))
    return SweepResult(param="targets", grid=list(target_counts), points=points)


# -- report files ------------------------------------------------------------------


def write_eval_report(report: EvalReport, out_dir: Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(
        "mean_score,std_score,episodes,auctions,forced_reauctions,total_timesteps\n"
        f"{report.mean_score!r},{report.std_score!r},{report.episodes},"
        f"{report.auction_count},{report.forced_reauction_count},"
        f"{report.total_timesteps}\n"
    )
    lines = ["seed,episode,score"]
    for seed, scores in report.per_seed_scores.items():
        for i, s in enumerate(scores):
            lines.append(f"{seed},{i},{s!r}")
    (out / "scores.csv").write_text("\n".join(lines) + "\n")
    lines = ["agent,timesteps"]
    for i, c in enumerate(report.control_histogram):
        lines.append(f"{i},{int(c)}")
    (out / "control_hist.csv").write_text("\n".join(lines) + "\n")
    lines = ["agent,bid,count"]
    for i in range(report.bid_histogram.shape[0]):
        for b in range(report.bid_histogram.shape[1]):
            lines.append(f"{i},{b},{int(report.bid_histogram[i, b])}")
    (out / "bid_hist.csv").write_text("\n".join(lines) + "\n")
    with open(out / "auctions.jsonl", "w") as fh:
        for rec in report.auction_records:
            fh.write(rec.as_json() + "\n")


def write_sweep_csv(result: SweepResult, path: Path) -> None:
    lines = ["param,value,seed,mean_score,std_score,episodes"]
    for row in result.rows():
        lines.append(
            f"{row['param']},{row['value']},{row['seed']},"
            f"{row['mean_score']!r},{row['std_score']!r},{row['episodes']}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
