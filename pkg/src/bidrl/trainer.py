"""Concurrent multi-agent PPO on the bidding game, plus monolithic baselines.

Every live agent acts with the same shared network; rollouts are recorded from
each agent's perspective and pooled, so minibatches mix entries from different
agents. Baselines train one policy on the raw environment with the summed
reward (optionally shaped toward the nearest or soonest-expiring target) and no
bid head.

Determinism: all randomness derives from one seed via SeedSequence spawning
(env instance streams, action sampling, weight init, minibatch shuffling,
evaluation); with a single worker the learning curve is byte-reproducible.
"""

from __future__ import annotations

import enum
import math
import os
import signal
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .bidding import AuctionParams
from .catfeeder import CatFeederConfig
from .policy import (
    ActorCritic,
    NetworkConfig,
    ObsBatch,
    ObservationLayout,
    sample_policy,
    save_checkpoint,
)
from .vecenv import VecBiddingGame, VecCatFeeder, VecSingleEnv

CURVE_HEADER = (
    "iteration,env_steps,mean_score,std_score,"
    "policy_loss,value_loss,entropy,clip_frac,approx_kl"
)


class NonFiniteLossError(RuntimeError):
    pass


class TrainMode(str, enum.Enum):
    MULTI_AGENT_BIDDING = "multi_agent_bidding"
    SINGLE_SPARSE = "single_sparse"
    SINGLE_NEAREST_SHAPING = "single_nearest_shaping"
    SINGLE_EXPIRY_SHAPING = "single_expiry_shaping"

    @property
    def is_single(self) -> bool:
        return self is not TrainMode.MULTI_AGENT_BIDDING


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 400
    num_envs: int = 4096
    steps_per_rollout: int = 256
    num_minibatches: int = 256
    ppo_epochs: int = 4
    learning_rate: float = 2.5e-4
    anneal_lr: bool = True
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_coef: float = 0.05
    entropy_coef: float = 0.03
    value_coef: float = 1.0
    max_grad_norm: float = 0.5
    seeds: tuple[int, ...] = (1825, 410, 4507, 4013, 3658)
    mode: TrainMode = TrainMode.MULTI_AGENT_BIDDING
    target_kl: float | None = None
    eval_interval: int = 10
    eval_episodes: int = 16
    checkpoint_interval: int = 50

    def validate(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.num_envs < 1 or self.steps_per_rollout < 1:
            raise ValueError("num_envs and steps_per_rollout must be >= 1")
        if self.num_minibatches < 1 or self.ppo_epochs < 1:
            raise ValueError("num_minibatches and ppo_epochs must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not self.seeds:
            raise ValueError("at least one seed is required")


@dataclass
class RolloutBuffer:
    """Per (step, env, agent) records pooled for the PPO update.

    `live` marks entries whose agent was alive when it observed; only those
    enter minibatches. `dones` are per-agent (episode end or the agent's own
    objective disappearing).
    """

    direct: np.ndarray
    competitors: np.ndarray
    mask: np.ndarray
    actions: np.ndarray
    bids: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    live: np.ndarray
    penalties: np.ndarray
    bootstrap_values: np.ndarray
    has_bids: bool

    @property
    def shape(self) -> tuple[int, int, int]:
        t, e, a = self.rewards.shape
        return t, e, a

    @property
    def num_entries(self) -> int:
        t, e, a = self.shape
        return t * e * a


# -- environment adapters -------------------------------------------------------


class BiddingRollout:
    """Vectorized bidding game exposed in (env, agent)-array form."""

    def __init__(self, env_config: CatFeederConfig, params: AuctionParams,
                 num_envs: int, rngs: list[np.random.Generator]):
        self.game = VecBiddingGame(VecCatFeeder(env_config, num_envs, rngs), params)
        self.num_agents = self.game.num_agents
        self.has_bids = True

    def reset_all(self) -> None:
        self.game.reset_all()

    def observations(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.game.observations()

    def live(self) -> np.ndarray:
        return self.game.live_mask()

    def step(self, actions: np.ndarray, bids: np.ndarray):
        out = self.game.step(actions, bids)
        return out.rewards, out.agent_done, out.penalties


class SingleRollout:
    """Monolithic baseline exposed as a one-agent rollout source."""

    def __init__(self, env_config: CatFeederConfig, mode: TrainMode,
                 shaping_scale: float, num_envs: int,
                 rngs: list[np.random.Generator]):
        shaping = {
            TrainMode.SINGLE_SPARSE: None,
            TrainMode.SINGLE_NEAREST_SHAPING: VecSingleEnv.NEAREST,
            TrainMode.SINGLE_EXPIRY_SHAPING: VecSingleEnv.EXPIRY,
        }[mode]
        self.env = VecSingleEnv(
            env_config, num_envs, rngs, shaping=shaping, shaping_scale=shaping_scale
        )
        self.num_agents = 1
        self.has_bids = False

    def reset_all(self) -> None:
        self.env.reset_all()

    def observations(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        flat = self.env.observations()
        e = flat.shape[0]
        return flat[:, None, :], np.zeros((e, 1, 0, 4)), np.zeros((e, 1, 0), dtype=bool)

    def live(self) -> np.ndarray:
        return np.ones((self.env.num_envs, 1), dtype=bool)

    def step(self, actions: np.ndarray, bids: np.ndarray):
        scalar, _, _, done = self.env.step(actions[:, 0])
        zeros = np.zeros_like(scalar)
        return scalar[:, None], done[:, None], zeros[:, None]


# -- rollout collection -----------------------------------------------------------


def collect_rollouts(
    rollout_env,
    model: ActorCritic,
    steps: int,
    sample_rng: np.random.Generator,
) -> RolloutBuffer:
    """Step the vectorized games `steps` times, sampling every live agent's
    (action, bid) from the shared policy; episodes auto-reset with per-agent
    done flags recorded."""
    e = rollout_env.live().shape[0]
    a = rollout_env.num_agents
    d0, c0, m0 = rollout_env.observations()

    direct = np.zeros((steps, e, a, d0.shape[-1]), dtype=np.float32)
    comp = np.zeros((steps, e, a, c0.shape[2], 4), dtype=np.float32)
    mask = np.zeros((steps, e, a, c0.shape[2]), dtype=bool)
    actions = np.zeros((steps, e, a), dtype=np.int64)
    bids = np.zeros((steps, e, a), dtype=np.int64)
    log_probs = np.zeros((steps, e, a), dtype=np.float64)
    values = np.zeros((steps, e, a), dtype=np.float64)
    rewards = np.zeros((steps, e, a), dtype=np.float64)
    dones = np.zeros((steps, e, a), dtype=np.float64)
    live = np.zeros((steps, e, a), dtype=bool)
    penalties = np.zeros((steps, e, a), dtype=np.float64)

    d, c, mk = d0, c0, m0
    for t in range(steps):
        live[t] = rollout_env.live()
        direct[t], comp[t], mask[t] = d, c, mk
        batch = ObsBatch(
            direct=d.reshape(e * a, -1).astype(np.float32),
            competitors=c.reshape(e * a, c.shape[2], 4).astype(np.float32),
            mask=mk.reshape(e * a, -1),
        )
        res = sample_policy(model, batch, sample_rng)
        act = res.actions.reshape(e, a)
        bid = (
            res.bids.reshape(e, a)
            if res.bids is not None
            else np.zeros((e, a), dtype=np.int64)
        )
        r, agent_done, pen = rollout_env.step(act, bid)

        actions[t] = act
        bids[t] = bid
        log_probs[t] = res.log_probs.reshape(e, a)
        values[t] = res.values.reshape(e, a)
        rewards[t] = r
        dones[t] = agent_done.astype(np.float64)
        penalties[t] = pen
        d, c, mk = rollout_env.observations()

    final_batch = ObsBatch(
        direct=d.reshape(e * a, -1).astype(np.float32),
        competitors=c.reshape(e * a, c.shape[2], 4).astype(np.float32),
        mask=mk.reshape(e * a, -1),
    )
    _, _, bootstrap = model.logits_values(final_batch)

    return RolloutBuffer(
        direct=direct,
        competitors=comp,
        mask=mask,
        actions=actions,
        bids=bids,
        log_probs=log_probs,
        values=values,
        rewards=rewards,
        dones=dones,
        live=live,
        penalties=penalties,
        bootstrap_values=bootstrap.reshape(e, a),
        has_bids=rollout_env.has_bids,
    )


# -- advantage estimation -----------------------------------------------------


def compute_gae(
    buffer: RolloutBuffer, gamma: float, gae_lambda: float
) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted TD-error recursion, independent per (env, agent).

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t     = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
    """
    t_len, e, a = buffer.shape
    advantages = np.zeros((t_len, e, a), dtype=np.float64)
    last = np.zeros((e, a), dtype=np.float64)
    for t in reversed(range(t_len)):
        next_values = (
            buffer.bootstrap_values if t == t_len - 1 else buffer.values[t + 1]
        )
        nonterminal = 1.0 - buffer.dones[t]
        delta = (
            buffer.rewards[t]
            + gamma * next_values * nonterminal
            - buffer.values[t]
        )
        last = delta + gamma * gae_lambda * nonterminal * last
        advantages[t] = last
    returns = advantages + buffer.values
    return advantages, returns


# -- PPO update -----------------------------------------------------------------


@dataclass
class UpdateStats:
    policy_loss: float = math.nan
    value_loss: float = math.nan
    entropy: float = math.nan
    clip_frac: float = math.nan
    approx_kl: float = math.nan

    @staticmethod
    def mean(stats: Sequence["UpdateStats"]) -> "UpdateStats":
        if not stats:
            return UpdateStats()
        return UpdateStats(
            policy_loss=float(np.mean([s.policy_loss for s in stats])),
            value_loss=float(np.mean([s.value_loss for s in stats])),
            entropy=float(np.mean([s.entropy for s in stats])),
            clip_frac=float(np.mean([s.clip_frac for s in stats])),
            approx_kl=float(np.mean([s.approx_kl for s in stats])),
        )


def normalize_advantages(adv: torch.Tensor) -> torch.Tensor:
    """Zero-mean, unit-std within the minibatch (untouched when std is 0)."""
    mean = adv.mean()
    std = adv.std()
    if std > 0:
        return (adv - mean) / std
    return adv - mean


def clipped_policy_objective(
    ratio: torch.Tensor, advantages: torch.Tensor, clip_coef: float
) -> torch.Tensor:
    """Per-sample min(ratio * A, clip(ratio, 1 +- c) * A)."""
    return torch.minimum(
        ratio * advantages,
        torch.clamp(ratio, 1.0 - clip_coef, 1.0 + clip_coef) * advantages,
    )


def ppo_update(
    model: ActorCritic,
    optimizer: torch.optim.Optimizer,
    buffer: RolloutBuffer,
    advantages: np.ndarray,
    returns: np.ndarray,
    config: TrainConfig,
    perm_rng: np.random.Generator,
) -> UpdateStats:
    """Epochs of shuffled minibatches over the pooled live entries."""
    valid = buffer.live.reshape(-1)
    idx_all = np.flatnonzero(valid)
    t_len, e, a = buffer.shape
    k = buffer.competitors.shape[3]

    flat_direct = buffer.direct.reshape(t_len * e * a, -1)[idx_all]
    flat_comp = buffer.competitors.reshape(t_len * e * a, k, 4)[idx_all]
    flat_mask = buffer.mask.reshape(t_len * e * a, k)[idx_all]
    flat_actions = buffer.actions.reshape(-1)[idx_all]
    flat_bids = buffer.bids.reshape(-1)[idx_all]
    flat_logp = buffer.log_probs.reshape(-1)[idx_all]
    flat_adv = advantages.reshape(-1)[idx_all]
    flat_ret = returns.reshape(-1)[idx_all]

    t_direct = torch.as_tensor(flat_direct, dtype=torch.float32)
    t_comp = torch.as_tensor(flat_comp, dtype=torch.float32)
    t_mask = torch.as_tensor(flat_mask, dtype=torch.bool)
    t_actions = torch.as_tensor(flat_actions, dtype=torch.int64)
    t_bids = torch.as_tensor(flat_bids, dtype=torch.int64)
    t_logp = torch.as_tensor(flat_logp, dtype=torch.float32)
    t_adv = torch.as_tensor(flat_adv, dtype=torch.float32)
    t_ret = torch.as_tensor(flat_ret, dtype=torch.float32)

    n = idx_all.size
    stats: list[UpdateStats] = []
    stop = False
    for _ in range(config.ppo_epochs):
        order = perm_rng.permutation(n)
        epoch_kl: list[float] = []
        for mb in np.array_split(order, config.num_minibatches):
            if mb.size == 0:
                continue
            mb_t = torch.as_tensor(mb, dtype=torch.int64)
            new_logp, entropy, value = model.evaluate_actions(
                t_direct[mb_t],
                t_comp[mb_t],
                t_mask[mb_t],
                t_actions[mb_t],
                t_bids[mb_t] if buffer.has_bids else None,
            )
            log_ratio = new_logp - t_logp[mb_t]
            ratio = log_ratio.exp()
            adv = normalize_advantages(t_adv[mb_t])
            policy_loss = -clipped_policy_objective(
                ratio, adv, config.clip_coef
            ).mean()
            value_loss = ((value - t_ret[mb_t]) ** 2).mean()
            entropy_mean = entropy.mean()
            loss = (
                policy_loss
                + config.value_coef * value_loss
                - config.entropy_coef * entropy_mean
            )
            if not torch.isfinite(loss):
                raise NonFiniteLossError(
                    f"non-finite loss: policy={policy_loss.item()} "
                    f"value={value_loss.item()} entropy={entropy_mean.item()}"
                )
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.max_grad_norm)
            optimizer.step()

            with torch.no_grad():
                approx_kl = ((ratio - 1.0) - log_ratio).mean().item()
                clip_frac = (
                    ((ratio - 1.0).abs() > config.clip_coef).float().mean().item()
                )
            epoch_kl.append(approx_kl)
            stats.append(
                UpdateStats(
                    policy_loss=policy_loss.item(),
                    value_loss=value_loss.item(),
                    entropy=entropy_mean.item(),
                    clip_frac=clip_frac,
                    approx_kl=approx_kl,
                )
            )
        if config.target_kl is not None and epoch_kl:
            if float(np.mean(epoch_kl)) > config.target_kl:
                stop = True
        if stop:
            break
    return UpdateStats.mean(stats)


# -- training loops -----------------------------------------------------------------


@dataclass
class CurveRow:
    iteration: int
    env_steps: int
    mean_score: float
    std_score: float
    stats: UpdateStats

    def as_csv(self) -> str:
        cells = [
            str(self.iteration),
            str(self.env_steps),
            repr(float(self.mean_score)),
            repr(float(self.std_score)),
            repr(float(self.stats.policy_loss)),
            repr(float(self.stats.value_loss)),
            repr(float(self.stats.entropy)),
            repr(float(self.stats.clip_frac)),
            repr(float(self.stats.approx_kl)),
        ]
        return ",".join(cells)


@dataclass
class TrainResult:
    model: ActorCritic
    curve: list[CurveRow]
    final_checkpoint: Path | None = None
    interrupted: bool = False


def linear_anneal(lr0: float, iteration: int, total: int, enabled: bool) -> float:
    """lr at a given iteration: lr0 * (1 - iteration/total) when annealing."""
    if not enabled or total == 0:
        return lr0
    return lr0 * (1.0 - iteration / total)


def build_layout(
    env_config: CatFeederConfig, network: NetworkConfig, mode: TrainMode
) -> ObservationLayout:
    if mode.is_single:
        return ObservationLayout(
            direct_dim=2 + 4 * env_config.num_targets,
            num_competitors=0,
            has_bid_head=False,
        )
    if network.use_attention_pooling:
        return ObservationLayout(direct_dim=6, num_competitors=None)
    return ObservationLayout(
        direct_dim=6,
        num_competitors=0 if env_config.local_obs else env_config.num_targets - 1,
    )


def build_model(
    env_config: CatFeederConfig,
    params: AuctionParams,
    network: NetworkConfig,
    mode: TrainMode,
    init_seed: int,
) -> ActorCritic:
    net = replace(
        network,
        bid_levels=params.bid_levels,
        use_attention_pooling=network.use_attention_pooling and not mode.is_single,
    )
    layout = build_layout(env_config, net, mode)
    model = ActorCritic(net, layout)
    model.initialize(init_seed)
    return model


class _SignalFlag:
    def __init__(self) -> None:
        self.triggered = False
        self._previous: dict[int, object] = {}

    def __enter__(self) -> "_SignalFlag":
        def handler(signum, frame):
            self.triggered = True

        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                self._previous[sig] = signal.signal(sig, handler)
            except ValueError:  # not in the main thread
                pass
        return self

    def __exit__(self, *exc) -> None:
        for sig, prev in self._previous.items():
            signal.signal(sig, prev)


def train(
    env_config: CatFeederConfig,
    params: AuctionParams,
    network: NetworkConfig,
    config: TrainConfig,
    seed: int,
    out_dir: Path | None = None,
    method_name: str | None = None,
) -> TrainResult:
    """One training run for one seed: collect -> GAE -> update, with periodic
    greedy evaluation appended to the learning curve and periodic checkpoints.

    Single-agent modes train on the raw environment (summed rewards, optional
    baseline shaping scaled by env_config.distance_reward_scale, no bid head).
    """
    from . import evaluation  # deferred: evaluation drives training for sweeps

    config.validate()
    env_config.validate()
    params.validate()
    torch.set_num_threads(max(1, int(os.environ.get("BIDRL_TORCH_THREADS", "1"))))

    ss = np.random.SeedSequence(seed)
    children = ss.spawn(config.num_envs + 4)
    env_rngs = [np.random.Generator(np.random.PCG64(c)) for c in children[: config.num_envs]]
    sample_rng = np.random.Generator(np.random.PCG64(children[config.num_envs]))
    perm_rng = np.random.Generator(np.random.PCG64(children[config.num_envs + 1]))
    init_seed = int(children[config.num_envs + 2].generate_state(1)[0])
    eval_seed = int(children[config.num_envs + 3].generate_state(1)[0])

    model = build_model(env_config, params, network, config.mode, init_seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-5
    )

    if config.mode.is_single:
        rollout_env = SingleRollout(
            env_config,
            config.mode,
            shaping_scale=env_config.distance_reward_scale,
            num_envs=config.num_envs,
            rngs=env_rngs,
        )
    else:
        rollout_env = BiddingRollout(env_config, params, config.num_envs, env_rngs)
    rollout_env.reset_all()

    def eval_scores() -> np.ndarray:
        return evaluation.quick_scores(
            model,
            env_config,
            params,
            episodes=config.eval_episodes,
            seed=eval_seed,
            single=config.mode.is_single,
        )

    curve: list[CurveRow] = []
    if config.iterations > 0:
        scores0 = eval_scores()
        curve.append(
            CurveRow(
                iteration=0,
                env_steps=0,
                mean_score=float(scores0.mean()),
                std_score=float(scores0.std()),
                stats=UpdateStats(),
            )
        )

    interrupted = False
    with _SignalFlag() as flag:
        for it in range(config.iterations):
            for group in optimizer.param_groups:
                group["lr"] = linear_anneal(
                    config.learning_rate, it, config.iterations, config.anneal_lr
                )
            buffer = collect_rollouts(
                rollout_env, model, config.steps_per_rollout, sample_rng
            )
            advantages, returns = compute_gae(
                buffer, config.gamma, config.gae_lambda
            )
            stats = ppo_update(
                model, optimizer, buffer, advantages, returns, config, perm_rng
            )
            iteration = it + 1
            if (
                iteration % config.eval_interval == 0
                or iteration == config.iterations
            ):
                scores = eval_scores()
                curve.append(
                    CurveRow(
                        iteration=iteration,
                        env_steps=iteration * config.num_envs * config.steps_per_rollout,
                        mean_score=float(scores.mean()),
                        std_score=float(scores.std()),
                        stats=stats,
                    )
                )
            if out_dir is not None and config.checkpoint_interval > 0:
                if iteration % config.checkpoint_interval == 0 and iteration != config.iterations:
                    save_checkpoint(
                        Path(out_dir) / f"ckpt_iter_{iteration}.npz",
                        model,
                        _ckpt_metadata(env_config, params, config, seed, method_name),
                    )
            if flag.triggered:
                interrupted = True
                break

    final_path: Path | None = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_curve(out / "curve.csv", curve)
        final_path = out / "ckpt_final.npz"
        save_checkpoint(
            final_path,
            model,
            _ckpt_metadata(env_config, params, config, seed, method_name),
        )
    return TrainResult(
        model=model, curve=curve, final_checkpoint=final_path, interrupted=interrupted
    )


def _ckpt_metadata(env_config, params, config, seed, method_name):
    return {
        "mode": config.mode.value,
        "penalty_model": params.penalty_model.value,
        "method": method_name or default_method_name(config.mode, params),
        "seed": seed,
        "env": {
            f: getattr(env_config, f) for f in CatFeederConfig.__dataclass_fields__
        },
        "auction": {
            "tau": params.tau,
            "beta": params.beta,
            "rho": params.rho,
            "penalty_model": params.penalty_model.value,
        },
    }


def default_method_name(mode: TrainMode, params: AuctionParams) -> str:
    if mode is TrainMode.MULTI_AGENT_BIDDING:
        return (
            "AllPay" if params.penalty_model.value == "all_pay" else "WinnerPays"
        )
    return {
        TrainMode.SINGLE_SPARSE: "SingleSparse",
        TrainMode.SINGLE_NEAREST_SHAPING: "SingleNS",
        TrainMode.SINGLE_EXPIRY_SHAPING: "SingleES",
    }[mode]


def write_curve(path: Path, curve: list[CurveRow]) -> None:
    lines = [CURVE_HEADER]
    lines.extend(row.as_csv() for row in curve)
    Path(path).write_text("\n".join(lines) + "\n")


def train_single_baseline(
    env_config: CatFeederConfig,
    network: NetworkConfig,
    config: TrainConfig,
    seed: int,
    out_dir: Path | None = None,
) -> TrainResult:
    """Scalarized single-policy baseline; `config.mode` selects the reward
    mechanism (sparse sum / nearest shaping / expiry shaping)."""
    if not config.mode.is_single:
        raise ValueError("train_single_baseline requires a single-policy mode")
    return train(
        env_config,
        AuctionParams(),
        network,
        config,
        seed,
        out_dir=out_dir,
    )

