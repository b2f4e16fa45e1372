"""Plain-text rendering of rollouts: who is in control and which target it chases.

Each frame is `grid_size` rows of two-character cells: `R ` for the robot,
the target's slot digit for targets (with `*` appended on the slot the
controlling policy is pursuing), `. ` for empty cells. The status line carries
step, controller, bids (full vector on auction frames only), and running
score. A structured JSONL trace mirrors the same data for machines.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bidding import AuctionParams, BiddingGame, JointExtendedAction
from .catfeeder import CatFeederConfig, CatFeederEnv, CatFeederState
from .momdp import StepEvents
from .policy import ActorCritic, batch_observations, greedy_policy

_SLOT_CHARS = string.digits + string.ascii_lowercase


def slot_char(index: int) -> str:
    return _SLOT_CHARS[index] if index < len(_SLOT_CHARS) else "?"


def render_grid(state: CatFeederState, grid_size: int, controlled_slot: int | None) -> str:
    """One frame body: exactly `grid_size` text rows, highest y first."""
    cells: dict[tuple[int, int], str] = {}
    for i in reversed(range(state.num_slots)):
        if not state.alive[i]:
            continue
        marker = "*" if i == controlled_slot else " "
        cells[(int(state.cells[i][0]), int(state.cells[i][1]))] = slot_char(i) + marker
    cells[(int(state.robot[0]), int(state.robot[1]))] = "R "
    rows = []
    for y in reversed(range(grid_size)):
        rows.append("".join(cells.get((x, y), ". ") for x in range(grid_size)))
    return "\n".join(rows)


def status_line(
    step: int, controller: int, bids: list[int] | None, score: int
) -> str:
    bid_part = f"bids {bids}" if bids is not None else "bids -"
    return f"step {step} | controller {controller} | {bid_part} | score {score}"


@dataclass
class RolloutRecord:
    step: int
    robot: tuple[int, int]
    targets: list[dict]
    controller: int
    bids: list[int] | None
    events: dict
    score: int
    rewards: list[float] = field(default_factory=list)

    def as_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "robot": list(self.robot),
                "targets": self.targets,
                "controller": self.controller,
                "bids": self.bids,
                "events": self.events,
                "score": self.score,
                "rewards": self.rewards,
            }
        )


def _target_dicts(state: CatFeederState) -> list[dict]:
    return [
        {
            "cell": [int(state.cells[i][0]), int(state.cells[i][1])],
            "life": int(state.life[i]),
            "alive": bool(state.alive[i]),
        }
        for i in range(state.num_slots)
    ]


def _event_dict(events: StepEvents) -> dict:
    return {
        "fed": list(events.fed),
        "expired": list(events.expired),
        "spawned": list(events.spawned),
    }


def play_episode(
    model: ActorCritic,
    env_config: CatFeederConfig,
    params: AuctionParams,
    seed: int,
    max_steps: int | None = None,
) -> tuple[list[str], list[RolloutRecord], int]:
    """One greedy episode on the single-instance game.

    Returns (frames, trace records, final score). The controller reported for a
    step is the agent whose action actually executed at that step.
    """
    env = CatFeederEnv(env_config)
    game = BiddingGame(env, params)
    rng = np.random.default_rng(seed)
    state, _ = game.reset(rng)
    frames: list[str] = []
    records: list[RolloutRecord] = []
    score = 0
    limit = max_steps if max_steps is not None else env_config.max_episode_steps
    for step in range(limit):
        if game.is_terminal(state):
            break
        obs = game.observe_all(state)
        actions, bids = greedy_policy(model, batch_observations(obs))
        joint = JointExtendedAction(
            actions=tuple(int(a) for a in actions),
            bids=tuple(int(b) for b in bids) if bids is not None else (0,) * len(obs),
        )
        auction_frame = state.countdown == 0
        outcome = game.step(state, joint, rng)
        score += outcome.events.score_delta
        shown_bids = list(joint.bids) if auction_frame else None
        frames.append(
            render_grid(state.base, env_config.grid_size, outcome.executed_agent)
            + "\n"
            + status_line(step, outcome.executed_agent, shown_bids, score)
        )
        records.append(
            RolloutRecord(
                step=step,
                robot=(int(state.base.robot[0]), int(state.base.robot[1])),
                targets=_target_dicts(state.base),
                controller=outcome.executed_agent,
                bids=shown_bids,
                events=_event_dict(outcome.events),
                score=score,
                rewards=[float(r) for r in outcome.rewards],
            )
        )
        state = outcome.next_state
    return frames, records, score


def write_rollout(
    frames: list[str], records: list[RolloutRecord], out_dir: Path
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "frames.txt").write_text("\n\n".join(frames) + "\n")
    with open(out / "trace.jsonl", "w") as fh:
        for rec in records:
            fh.write(rec.as_json() + "\n")
