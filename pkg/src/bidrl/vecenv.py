"""Batched stepping of many independent game instances.

Deterministic dynamics run as array operations over all instances at once;
every random draw comes from the owning instance's private Generator in the
same canonical order the single-instance implementations use (auction
tie-break, then respawn cell+heading per dead slot in slot order, then one
batched uniform per mover plus heading draws in slot order). Trajectories are
therefore bitwise-identical to stepping N separate instances — the faster path
changes nothing observable.

Slot counts are fixed here (no Poisson arrivals); dynamic slot growth stays on
the single-instance path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bidding import AuctionParams, PenaltyModel
from .catfeeder import ACTION_VECTORS, NUM_HEADINGS, CatFeederConfig, CatFeederState


class VecCatFeeder:
    """`num_envs` feeder instances stepped in lockstep on stacked arrays."""

    def __init__(
        self,
        config: CatFeederConfig,
        num_envs: int,
        rngs: list[np.random.Generator],
    ):
        config.validate()
        if config.arrival_rate > 0.0:
            raise ValueError("vectorized stepping supports fixed slot counts only")
        if len(rngs) != num_envs:
            raise ValueError("one RNG stream per environment instance is required")
        self.config = config
        self.num_envs = num_envs
        self.rngs = rngs
        m = config.num_targets
        self.robot = np.zeros((num_envs, 2), dtype=np.int64)
        self.cells = np.zeros((num_envs, m, 2), dtype=np.int64)
        self.headings = np.zeros((num_envs, m), dtype=np.int64)
        self.life = np.zeros((num_envs, m), dtype=np.int64)
        self.alive = np.zeros((num_envs, m), dtype=bool)
        self.step_index = np.zeros(num_envs, dtype=np.int64)

    @property
    def num_slots(self) -> int:
        return self.config.num_targets

    def reset_env(self, e: int) -> None:
        cfg = self.config
        rng = self.rngs[e]
        n_cells = cfg.grid_size * cfg.grid_size
        flat = rng.choice(n_cells, size=cfg.num_targets + 1, replace=False)
        xy = np.stack([flat % cfg.grid_size, flat // cfg.grid_size], axis=1)
        self.robot[e] = xy[0]
        self.cells[e] = xy[1:]
        self.headings[e] = rng.integers(0, NUM_HEADINGS, size=cfg.num_targets)
        self.life[e] = cfg.expiry_steps
        self.alive[e] = True
        self.step_index[e] = 0

    def reset_all(self) -> None:
        for e in range(self.num_envs):
            self.reset_env(e)

    def state_of(self, e: int) -> CatFeederState:
        return CatFeederState(
            robot=self.robot[e].copy(),
            cells=self.cells[e].copy(),
            headings=self.headings[e].copy(),
            life=self.life[e].copy(),
            alive=self.alive[e].copy(),
            step_index=int(self.step_index[e]),
        )

    def step(
        self, actions: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Advance every instance one step.

        Returns (rewards (E,m), fed (E,m), expired (E,m), terminal (E,)).
        """
        cfg = self.config
        alive_at_start = self.alive.copy()
        prev_dist = np.abs(self.cells - self.robot[:, None, :]).sum(axis=2)

        self.robot = np.clip(
            self.robot + ACTION_VECTORS[actions], 0, cfg.grid_size - 1
        )

        fed = alive_at_start & (self.cells == self.robot[:, None, :]).all(axis=2)
        rewards = fed * cfg.target_reward

        ticking = alive_at_start & ~fed
        self.life = self.life - ticking
        expired = ticking & (self.life == 0)
        rewards = rewards - expired * cfg.expiry_penalty

        dead_now = fed | expired
        self.alive &= ~dead_now
        if cfg.respawn and dead_now.any():
            n_cells = cfg.grid_size * cfg.grid_size
            for e in np.flatnonzero(dead_now.any(axis=1)):
                rng = self.rngs[e]
                robot_flat = int(self.robot[e, 1]) * cfg.grid_size + int(self.robot[e, 0])
                for i in np.flatnonzero(dead_now[e]):
                    idx = int(rng.integers(n_cells - 1))
                    if idx >= robot_flat:
                        idx += 1
                    self.cells[e, i] = (idx % cfg.grid_size, idx // cfg.grid_size)
                    self.headings[e, i] = int(rng.integers(NUM_HEADINGS))
                    self.life[e, i] = cfg.expiry_steps
                    self.alive[e, i] = True

        if cfg.moving_targets:
            move_env = self.step_index % cfg.target_move_interval == 0
            movers = alive_at_start & ~dead_now & move_env[:, None]
            if movers.any():
                for e in np.flatnonzero(movers.any(axis=1)):
                    rng = self.rngs[e]
                    slot_idx = np.flatnonzero(movers[e])
                    us = rng.random(slot_idx.size)
                    for j, i in enumerate(slot_idx):
                        if us[j] < cfg.direction_change_prob:
                            self.headings[e, i] = int(rng.integers(NUM_HEADINGS))
                self.cells[movers] = np.clip(
                    self.cells[movers] + ACTION_VECTORS[self.headings[movers]],
                    0,
                    cfg.grid_size - 1,
                )

        if cfg.distance_reward_scale > 0.0:
            steady = alive_at_start & ~dead_now
            next_dist = np.abs(self.cells - self.robot[:, None, :]).sum(axis=2)
            rewards = rewards + cfg.distance_reward_scale * steady * (
                prev_dist - next_dist
            )

        self.step_index += 1
        terminal = self.step_index >= cfg.max_episode_steps
        terminal |= ~self.alive.any(axis=1)
        return rewards.astype(np.float64), fed, expired, terminal

    # -- observation builders ------------------------------------------------

    def target_blocks(self) -> np.ndarray:
        """(E, m, 4) rows: displacement, normalized life, alive flag; dead rows zero."""
        cfg = self.config
        disp = (self.cells - self.robot[:, None, :]) / cfg.grid_size
        blocks = np.concatenate(
            [
                disp,
                (self.life / cfg.expiry_steps)[:, :, None],
                np.ones((self.num_envs, self.num_slots, 1)),
            ],
            axis=2,
        )
        return blocks * self.alive[:, :, None]

    def bidding_observations(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-agent views: (direct (E,m,6), competitors (E,m,m-1,4), mask (E,m,m-1)).

        Competitor rows follow slot order with the agent's own slot removed;
        dead competitors are zero rows masked out (equivalent to excluding them
        from the pooled set).
        """
        cfg = self.config
        m = self.num_slots
        blocks = self.target_blocks()
        robot = np.repeat(
            (self.robot / cfg.grid_size)[:, None, :], m, axis=1
        )
        direct = np.concatenate([robot, blocks], axis=2)
        if cfg.local_obs or m == 1:
            comp = np.zeros((self.num_envs, m, 0, 4))
            mask = np.zeros((self.num_envs, m, 0), dtype=bool)
            return direct, comp, mask
        others = np.array(
            [[j for j in range(m) if j != i] for i in range(m)], dtype=np.int64
        )
        comp = blocks[:, others, :]  # (E, m, m-1, 4)
        mask = self.alive[:, others]  # (E, m, m-1)
        return direct, comp, mask

    def flat_observations(self) -> np.ndarray:
        """Monolithic view (E, 2 + 4m): robot block plus slot blocks in order."""
        robot = self.robot / self.config.grid_size
        blocks = self.target_blocks().reshape(self.num_envs, -1)
        return np.concatenate([robot, blocks], axis=1)


@dataclass
class VecStepOutcome:
    rewards: np.ndarray  # (E, m) slot-aligned, penalties already applied
    penalties: np.ndarray  # (E, m)
    executed: np.ndarray  # (E,) slot index whose action ran
    auction_held: np.ndarray  # (E,) bool
    forced: np.ndarray  # (E,) bool, auction was a forced re-auction
    fed: np.ndarray  # (E, m) bool
    expired: np.ndarray  # (E, m) bool
    done: np.ndarray  # (E,) episode ended this step (instance was auto-reset)
    live_before: np.ndarray  # (E, m) live mask when actions were submitted
    agent_done: np.ndarray  # (E, m) agent's objective ended this step


class VecBiddingGame:
    """Batched bidding-game wrapper with auto-reset on episode end."""

    def __init__(self, env: VecCatFeeder, params: AuctionParams):
        params.validate()
        self.env = env
        self.params = params
        e = env.num_envs
        self.controller = np.zeros(e, dtype=np.int64)
        self.countdown = np.zeros(e, dtype=np.int64)
        self.forced_pending = np.zeros(e, dtype=bool)

    @property
    def num_envs(self) -> int:
        return self.env.num_envs

    @property
    def num_agents(self) -> int:
        return self.env.num_slots

    def reset_all(self) -> None:
        self.env.reset_all()
        self.controller[:] = 0
        self.countdown[:] = 0
        self.forced_pending[:] = False

    def observations(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.env.bidding_observations()

    def live_mask(self) -> np.ndarray:
        return self.env.alive.copy()

    def step(self, actions: np.ndarray, bids: np.ndarray) -> VecStepOutcome:
        """Advance all games; `actions`/`bids` are (E, m) slot-aligned.

        Entries for dead slots are ignored. Ties draw from the instance's own
        stream before any base-environment draw, matching the single-instance
        order.
        """
        env = self.env
        e_count, m = env.num_envs, env.num_slots
        live = env.alive.copy()
        auction = self.countdown == 0
        forced = auction & self.forced_pending
        executed = self.controller.copy()
        for e in np.flatnonzero(auction):
            slots = np.flatnonzero(live[e])
            slot_bids = bids[e, slots]
            winners = slots[slot_bids == slot_bids.max()]
            if winners.size == 1:
                executed[e] = winners[0]
            else:
                executed[e] = winners[int(env.rngs[e].integers(winners.size))]

        exec_actions = actions[np.arange(e_count), executed]
        rewards, fed, expired, terminal = env.step(exec_actions)

        penalties = np.zeros((e_count, m), dtype=np.float64)
        if self.params.rho > 0.0:
            if self.params.penalty_model == PenaltyModel.ALL_PAY:
                penalties = (
                    self.params.rho * bids * live * auction[:, None]
                ).astype(np.float64)
            else:
                pay = np.flatnonzero(auction)
                penalties[pay, executed[pay]] = (
                    self.params.rho * bids[pay, executed[pay]]
                )
        rewards = rewards - penalties

        self.controller = np.where(auction, executed, self.controller)
        self.countdown = np.where(auction, self.params.tau - 1, self.countdown - 1)
        self.forced_pending &= ~auction

        agent_done = live & ~env.alive
        ctrl_dead = ~env.alive[np.arange(e_count), self.controller] & ~terminal
        self.countdown[ctrl_dead] = 0
        self.forced_pending |= ctrl_dead

        for e in np.flatnonzero(terminal):
            env.reset_env(e)
            self.controller[e] = 0
            self.countdown[e] = 0
            self.forced_pending[e] = False
        agent_done = agent_done | terminal[:, None]

        return VecStepOutcome(
            rewards=rewards,
            penalties=penalties,
            executed=executed,
            auction_held=auction,
            forced=forced,
            fed=fed,
            expired=expired,
            done=terminal,
            live_before=live,
            agent_done=agent_done,
        )


class VecSingleEnv:
    """Monolithic baseline view: one agent, scalar reward = sum over objectives.

    The per-objective shaping of the underlying environment is forced off; the
    baseline's own shaping term (toward the nearest live target, or the one
    closest to expiring) is added to the scalar reward with `shaping_scale`,
    and only when the chosen target survives the step.
    """

    NEAREST = "nearest"
    EXPIRY = "expiry"

    def __init__(
        self,
        config: CatFeederConfig,
        num_envs: int,
        rngs: list[np.random.Generator],
        shaping: str | None = None,
        shaping_scale: float = 0.0,
    ):
        if shaping not in (None, self.NEAREST, self.EXPIRY):
            raise ValueError(f"unknown shaping mode {shaping!r}")
        self.env = VecCatFeeder(
            replace(config, distance_reward_scale=0.0), num_envs, rngs
        )
        self.shaping = shaping
        self.shaping_scale = shaping_scale

    @property
    def num_envs(self) -> int:
        return self.env.num_envs

    def reset_all(self) -> None:
        self.env.reset_all()

    def observations(self) -> np.ndarray:
        return self.env.flat_observations()

    def _choose_targets(self) -> np.ndarray:
        """Per env: slot index of the shaping target (ties to the lowest slot)."""
        env = self.env
        if self.shaping == self.NEAREST:
            dist = np.abs(env.cells - env.robot[:, None, :]).sum(axis=2)
            keyed = np.where(env.alive, dist, np.iinfo(np.int64).max)
        else:
            keyed = np.where(env.alive, env.life, np.iinfo(np.int64).max)
        return keyed.argmin(axis=1)

    def step(self, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns (scalar rewards (E,), fed (E,m), expired (E,m), done (E,));
        auto-resets finished instances."""
        env = self.env
        e_count = env.num_envs
        idx = np.arange(e_count)
        if self.shaping is not None and self.shaping_scale > 0.0:
            chosen = self._choose_targets()
            had_target = env.alive[idx, chosen]
            prev_d = np.abs(env.cells[idx, chosen] - env.robot).sum(axis=1)
        rewards_vec, fed, expired, terminal = env.step(actions)
        scalar = rewards_vec.sum(axis=1)
        if self.shaping is not None and self.shaping_scale > 0.0:
            # a fed slot may hold a respawned (different) target: no shaping then
            survived = had_target & ~(fed | expired)[idx, chosen]
            next_d = np.abs(env.cells[idx, chosen] - env.robot).sum(axis=1)
            scalar = scalar + self.shaping_scale * survived * (prev_d - next_d)
        for e in np.flatnonzero(terminal):
            env.reset_env(e)
        return scalar, fed, expired, terminal
