"""Grid feeder benchmark: a robot on a square grid serves moving, expiring targets.

One objective per target slot. Feeding a live target pays `target_reward` on that
slot's reward component; letting it expire costs `expiry_penalty`. A dense shaping
term (potential difference of the Manhattan distance robot->own target) can be
added per objective via `distance_reward_scale`.

Within one step the order is fixed: robot moves (clipped at walls), feeds are
checked on the robot's new cell, remaining lifetimes tick down and expirations
fire, dead slots respawn (when enabled), then targets move on move steps, then
Poisson arrivals (when enabled). RNG draws follow this order exactly, one stream
per instance — the batched stepper in `vecenv` replays the identical draw order
so both paths produce bitwise-equal trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .momdp import Observation, StepEvents

ACTION_NAMES = ("up", "down", "left", "right", "stay")
# (dx, dy) per action; headings reuse the first four rows.
ACTION_VECTORS = np.array([(0, 1), (0, -1), (-1, 0), (1, 0), (0, 0)], dtype=np.int64)
NUM_ACTIONS = 5
NUM_HEADINGS = 4


class CapacityError(ValueError):
    """More occupants requested than the grid has cells."""


class DeadAgentError(ValueError):
    """An operation addressed an agent whose target is not alive."""


class InvalidActionError(ValueError):
    """Action index outside the discrete action set."""


@dataclass(frozen=True)
class CatFeederConfig:
    grid_size: int = 30
    num_targets: int = 8
    target_reward: float = 50.0
    expiry_steps: int = 200
    expiry_penalty: float = 50.0
    max_episode_steps: int = 2000
    moving_targets: bool = True
    direction_change_prob: float = 0.1
    target_move_interval: int = 5
    distance_reward_scale: float = 0.6
    respawn: bool = True
    local_obs: bool = False
    arrival_rate: float = 0.0

    def validate(self) -> None:
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if self.num_targets < 1:
            raise ValueError("num_targets must be >= 1")
        if self.expiry_steps < 1:
            raise ValueError("expiry_steps must be >= 1")
        if self.expiry_steps > self.max_episode_steps:
            raise ValueError("expiry_steps must not exceed max_episode_steps")
        if not 0.0 <= self.direction_change_prob <= 1.0:
            raise ValueError("direction_change_prob must lie in [0, 1]")
        if self.target_move_interval < 1:
            raise ValueError("target_move_interval must be >= 1")
        if self.distance_reward_scale < 0.0:
            raise ValueError("distance_reward_scale must be non-negative")
        if self.arrival_rate < 0.0:
            raise ValueError("arrival_rate must be non-negative")
        if self.num_targets + 1 > self.grid_size * self.grid_size:
            raise CapacityError(
                f"{self.num_targets} targets + robot exceed a "
                f"{self.grid_size}x{self.grid_size} grid"
            )


@dataclass
class CatFeederState:
    robot: np.ndarray  # (2,) int64
    cells: np.ndarray  # (m, 2) int64
    headings: np.ndarray  # (m,) int64 heading indices
    life: np.ndarray  # (m,) int64 steps until expiry
    alive: np.ndarray  # (m,) bool
    step_index: int = 0

    def copy(self) -> "CatFeederState":
        return CatFeederState(
            robot=self.robot.copy(),
            cells=self.cells.copy(),
            headings=self.headings.copy(),
            life=self.life.copy(),
            alive=self.alive.copy(),
            step_index=self.step_index,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CatFeederState):
            return NotImplemented
        return (
            self.step_index == other.step_index
            and np.array_equal(self.robot, other.robot)
            and np.array_equal(self.cells, other.cells)
            and np.array_equal(self.headings, other.headings)
            and np.array_equal(self.life, other.life)
            and np.array_equal(self.alive, other.alive)
        )

    @property
    def num_slots(self) -> int:
        return self.life.shape[0]


def manhattan(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.abs(np.asarray(a) - np.asarray(b)).sum())


def shaping_reward(prev_dist: int, next_dist: int, scale: float) -> float:
    """Potential-difference shaping: positive when the robot closed the gap.

    Telescopes over any segment where the same target stays alive, so the total
    shaping on a segment is scale * (d_start - d_end) and cannot be farmed by
    oscillation.
    """
    return scale * (float(prev_dist) - float(next_dist))


def draw_cell_excluding(grid_size: int, excluded_flat: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform cell over the grid minus one excluded cell, using a single draw."""
    n = grid_size * grid_size
    idx = int(rng.integers(n - 1))
    if idx >= excluded_flat:
        idx += 1
    return np.array(divmod(idx, grid_size)[::-1], dtype=np.int64)  # (x, y)


class CatFeederEnv:
    """Single-instance environment implementing the MoMdp contract."""

    def __init__(self, config: CatFeederConfig):
        config.validate()
        self.config = config
        self.action_count = NUM_ACTIONS
        self.discount = 0.99  # trainer owns the effective gamma; kept for the MoMdp contract

    @property
    def num_objectives(self) -> int:
        return self.config.num_targets

    # -- lifecycle ---------------------------------------------------------

    def reset(self, rng: np.random.Generator) -> CatFeederState:
        cfg = self.config
        n_cells = cfg.grid_size * cfg.grid_size
        flat = rng.choice(n_cells, size=cfg.num_targets + 1, replace=False)
        xy = np.stack([flat % cfg.grid_size, flat // cfg.grid_size], axis=1).astype(np.int64)
        headings = rng.integers(0, NUM_HEADINGS, size=cfg.num_targets).astype(np.int64)
        return CatFeederState(
            robot=xy[0],
            cells=xy[1:],
            headings=headings,
            life=np.full(cfg.num_targets, cfg.expiry_steps, dtype=np.int64),
            alive=np.ones(cfg.num_targets, dtype=bool),
            step_index=0,
        )

    def is_terminal(self, state: CatFeederState) -> bool:
        if state.step_index >= self.config.max_episode_steps:
            return True
        return not bool(state.alive.any())

    def live_mask(self, state: CatFeederState) -> np.ndarray:
        return state.alive.copy()

    # -- dynamics ----------------------------------------------------------

    def step(
        self, state: CatFeederState, action: int, rng: np.random.Generator
    ) -> tuple[CatFeederState, np.ndarray, StepEvents]:
        if not 0 <= int(action) < NUM_ACTIONS:
            raise InvalidActionError(f"action must be in [0, {NUM_ACTIONS}), got {action}")
        cfg = self.config
        nxt = state.copy()
        m = state.num_slots
        rewards = np.zeros(m, dtype=np.float64)
        alive_at_start = state.alive.copy()
        prev_dist = np.abs(state.cells - state.robot).sum(axis=1)

        nxt.robot = np.clip(state.robot + ACTION_VECTORS[action], 0, cfg.grid_size - 1)

        fed = alive_at_start & (nxt.cells == nxt.robot).all(axis=1)
        rewards[fed] += cfg.target_reward

        ticking = alive_at_start & ~fed
        nxt.life[ticking] -= 1
        expired = ticking & (nxt.life == 0)
        rewards[expired] -= cfg.expiry_penalty

        dead_now = fed | expired
        nxt.alive[dead_now] = False
        spawned: list[int] = []
        if cfg.respawn:
            robot_flat = int(nxt.robot[1]) * cfg.grid_size + int(nxt.robot[0])
            for i in np.flatnonzero(dead_now):
                nxt.cells[i] = draw_cell_excluding(cfg.grid_size, robot_flat, rng)
                nxt.headings[i] = int(rng.integers(NUM_HEADINGS))
                nxt.life[i] = cfg.expiry_steps
                nxt.alive[i] = True
                spawned.append(int(i))

        if cfg.moving_targets and state.step_index % cfg.target_move_interval == 0:
            movers = alive_at_start & ~dead_now
            mover_idx = np.flatnonzero(movers)
            if mover_idx.size:
                # one batched uniform per mover, then heading draws in slot order
                us = rng.random(mover_idx.size)
                for j, i in enumerate(mover_idx):
                    if us[j] < cfg.direction_change_prob:
                        nxt.headings[i] = int(rng.integers(NUM_HEADINGS))
                nxt.cells[movers] = np.clip(
                    nxt.cells[movers] + ACTION_VECTORS[nxt.headings[movers]],
                    0,
                    cfg.grid_size - 1,
                )

        if cfg.arrival_rate > 0.0:
            robot_flat = int(nxt.robot[1]) * cfg.grid_size + int(nxt.robot[0])
            capacity = cfg.grid_size * cfg.grid_size - 1
            n_new = int(rng.poisson(cfg.arrival_rate))
            n_new = min(n_new, capacity - int(nxt.alive.sum()))
            for _ in range(max(n_new, 0)):
                cell = draw_cell_excluding(cfg.grid_size, robot_flat, rng)
                heading = int(rng.integers(NUM_HEADINGS))
                nxt.cells = np.vstack([nxt.cells, cell[None, :]])
                nxt.headings = np.append(nxt.headings, heading)
                nxt.life = np.append(nxt.life, cfg.expiry_steps)
                nxt.alive = np.append(nxt.alive, True)
                spawned.append(nxt.num_slots - 1)

        if cfg.distance_reward_scale > 0.0:
            # Same live target at both ends of the transition, measured on each
            # full state (robot and target positions as of that state).
            steady = alive_at_start & ~dead_now
            if steady.any():
                next_dist = np.abs(nxt.cells[:m] - nxt.robot).sum(axis=1)
                for i in np.flatnonzero(steady):
                    rewards[i] += shaping_reward(
                        int(prev_dist[i]), int(next_dist[i]), cfg.distance_reward_scale
                    )

        nxt.step_index = state.step_index + 1
        events = StepEvents(
            fed=tuple(int(i) for i in np.flatnonzero(fed)),
            expired=tuple(int(i) for i in np.flatnonzero(expired)),
            spawned=tuple(spawned),
        )
        return nxt, rewards, events

    # -- objective-set changes --------------------------------------------

    def add_objective(
        self, state: CatFeederState, descriptor: dict | None, rng: np.random.Generator
    ) -> tuple[CatFeederState, int]:
        """Append a fresh target slot; descriptor may pin `cell` and `heading`."""
        cfg = self.config
        nxt = state.copy()
        descriptor = descriptor or {}
        if "cell" in descriptor:
            cell = np.asarray(descriptor["cell"], dtype=np.int64)
        else:
            robot_flat = int(nxt.robot[1]) * cfg.grid_size + int(nxt.robot[0])
            cell = draw_cell_excluding(cfg.grid_size, robot_flat, rng)
        heading = int(descriptor.get("heading", rng.integers(NUM_HEADINGS)))
        nxt.cells = np.vstack([nxt.cells, cell[None, :]])
        nxt.headings = np.append(nxt.headings, heading)
        nxt.life = np.append(nxt.life, int(descriptor.get("life", cfg.expiry_steps)))
        nxt.alive = np.append(nxt.alive, True)
        return nxt, nxt.num_slots - 1

    def remove_objective(self, state: CatFeederState, index: int) -> CatFeederState:
        if not state.alive[index]:
            raise DeadAgentError(f"target slot {index} is not alive")
        nxt = state.copy()
        nxt.alive[index] = False
        return nxt

    # -- observations ------------------------------------------------------

    def target_block(self, state: CatFeederState, index: int) -> np.ndarray:
        """4-feature row: relative displacement, normalized life, alive flag."""
        cfg = self.config
        if not state.alive[index]:
            return np.zeros(4, dtype=np.float64)
        disp = (state.cells[index] - state.robot) / cfg.grid_size
        return np.array(
            [disp[0], disp[1], state.life[index] / cfg.expiry_steps, 1.0], dtype=np.float64
        )

    def observe(self, state: CatFeederState, agent_index: int) -> Observation:
        if not (0 <= agent_index < state.num_slots) or not state.alive[agent_index]:
            raise DeadAgentError(f"agent {agent_index} is not live")
        cfg = self.config
        robot = state.robot / cfg.grid_size
        own = self.target_block(state, agent_index)
        if cfg.local_obs:
            competitors = np.zeros((0, 4), dtype=np.float64)
        else:
            others = [
                self.target_block(state, j)
                for j in range(state.num_slots)
                if j != agent_index and state.alive[j]
            ]
            competitors = (
                np.stack(others) if others else np.zeros((0, 4), dtype=np.float64)
            )
        return Observation(robot=robot, own=own, competitors=competitors)

    def observe_flat(self, state: CatFeederState) -> np.ndarray:
        """Monolithic-policy view: robot block plus every slot's block in slot order."""
        blocks = [state.robot / self.config.grid_size]
        blocks.extend(self.target_block(state, i) for i in range(state.num_slots))
        return np.concatenate(blocks)


def move_targets(
    env: CatFeederEnv, state: CatFeederState, rng: np.random.Generator
) -> CatFeederState:
    """Advance live targets one cell along their headings (resampling first).

    Standalone form of the movement phase for tests/analysis; `step` applies the
    same rule inline on move steps.
    """
    cfg = env.config
    nxt = state.copy()
    movers = state.alive.copy()
    mover_idx = np.flatnonzero(movers)
    if mover_idx.size:
        us = rng.random(mover_idx.size)
        for j, i in enumerate(mover_idx):
            if us[j] < cfg.direction_change_prob:
                nxt.headings[i] = int(rng.integers(NUM_HEADINGS))
        nxt.cells[movers] = np.clip(
            nxt.cells[movers] + ACTION_VECTORS[nxt.headings[movers]], 0, cfg.grid_size - 1
        )
    return nxt


def config_from_dict(raw: dict) -> CatFeederConfig:
    known = {f.name for f in CatFeederConfig.__dataclass_fields__.values()}
    unknown = set(raw) - known
    if unknown:
        raise KeyError(f"unknown env config keys: {sorted(unknown)}")
    cfg = CatFeederConfig(**raw)
    cfg.validate()
    return cfg
