"""Auction wrapper turning a multi-objective MDP into an m-player bidding game.

Each live agent submits an (action, bid) pair every step. While the countdown is
positive the current controller's action executes and bids are ignored. When the
countdown reaches zero an auction is held: the highest bidder (ties uniform at
random) takes control, executes its action immediately, and holds control for
the next window. Bid penalties are charged only at auction steps, either to the
executed agent (winner-pays) or to everyone (all-pay), scaled by `rho`.

Agents whose objective disappears are dropped from the live set automatically;
if the controller disappears mid-window the countdown is forced to zero so the
next step re-auctions control.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .momdp import MoMdp, Observation, StepEvents


class PenaltyModel(str, enum.Enum):
    WINNER_PAYS = "winner_pays"
    ALL_PAY = "all_pay"


class InvalidAuctionParamsError(ValueError):
    pass


class BidOutOfRangeError(ValueError):
    pass


class EmptyGameError(ValueError):
    """An objective change would leave the game without any live agent."""


@dataclass(frozen=True)
class AuctionParams:
    tau: int = 5
    beta: int = 6
    rho: float = 0.1
    penalty_model: PenaltyModel = PenaltyModel.ALL_PAY

    def validate(self) -> None:
        if self.tau < 1:
            raise InvalidAuctionParamsError(f"tau must be >= 1, got {self.tau}")
        if self.beta < 0:
            raise InvalidAuctionParamsError(f"beta must be >= 0, got {self.beta}")
        # rho = 0 is admitted so the bid-penalty ablation can switch penalties off.
        if not 0.0 <= self.rho < 1.0:
            raise InvalidAuctionParamsError(f"rho must lie in [0, 1), got {self.rho}")

    @property
    def bid_levels(self) -> int:
        return self.beta + 1


@dataclass
class BidGameState:
    """Base state plus controller identity (zero-based), auction countdown, and
    the live agent set (slot indices)."""

    base: Any
    controller: int
    countdown: int
    live: tuple[int, ...]
    forced_pending: bool = False

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BidGameState):
            return NotImplemented
        return (
            self.controller == other.controller
            and self.countdown == other.countdown
            and self.live == other.live
            and self.forced_pending == other.forced_pending
            and self.base == other.base
        )


@dataclass(frozen=True)
class JointExtendedAction:
    """One (environment action, bid) pair per live agent, in live-set order."""

    actions: tuple[int, ...]
    bids: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.actions) != len(self.bids):
            raise ValueError("actions and bids must pair up one-to-one")


@dataclass
class StepOutcome:
    next_state: BidGameState
    rewards: np.ndarray  # aligned with the live set that acted (pre-step order)
    auction_held: bool
    winner_set: tuple[int, ...]  # slot indices with maximal bid; empty off-auction
    executed_agent: int  # slot index whose action ran
    penalties: np.ndarray  # bid penalties charged this step, same alignment as rewards
    events: StepEvents
    terminal: bool
    forced_reauction: bool = False
    removed_agents: tuple[int, ...] = ()
    added_agents: tuple[int, ...] = ()


def resolve_auction(
    bids: Sequence[int], rng: np.random.Generator, beta: int | None = None
) -> int:
    """Index of the winning bidder: argmax, uniform over ties.

    Draws from `rng` only when there actually is a tie, so a single-bidder game
    never perturbs the stream shared with the base environment.
    """
    arr = np.asarray(bids)
    if arr.size == 0:
        raise ValueError("at least one bid is required")
    if (arr < 0).any():
        raise BidOutOfRangeError(f"bids must be non-negative, got {list(bids)}")
    if beta is not None and (arr > beta).any():
        raise BidOutOfRangeError(f"bids must not exceed {beta}, got {list(bids)}")
    winners = np.flatnonzero(arr == arr.max())
    if winners.size == 1:
        return int(winners[0])
    return int(winners[int(rng.integers(winners.size))])


class BiddingGame:
    def __init__(self, momdp: MoMdp, params: AuctionParams):
        params.validate()
        if momdp.num_objectives < 1:
            raise ValueError("wrapped environment must expose at least one objective")
        self.momdp = momdp
        self.params = params
        self.action_count = momdp.action_count

    # -- lifecycle ---------------------------------------------------------

    def reset(self, rng: np.random.Generator) -> tuple[BidGameState, list[Observation]]:
        base = self.momdp.reset(rng)
        live = tuple(int(i) for i in np.flatnonzero(self.momdp.live_mask(base)))
        state = BidGameState(base=base, controller=live[0], countdown=0, live=live)
        return state, self.observe_all(state)

    def is_terminal(self, state: BidGameState) -> bool:
        return self.momdp.is_terminal(state.base) or not state.live

    def observe_all(self, state: BidGameState) -> list[Observation]:
        return [self.momdp.observe(state.base, i) for i in state.live]

    # -- transition --------------------------------------------------------

    def _validate_joint(self, state: BidGameState, joint: JointExtendedAction) -> None:
        if len(joint.actions) != len(state.live):
            raise ValueError(
                f"joint action covers {len(joint.actions)} agents, "
                f"live set has {len(state.live)}"
            )
        for b in joint.bids:
            if not 0 <= int(b) <= self.params.beta:
                raise BidOutOfRangeError(
                    f"bid {b} outside [0, {self.params.beta}]"
                )

    def step(
        self, state: BidGameState, joint: JointExtendedAction, rng: np.random.Generator
    ) -> StepOutcome:
        self._validate_joint(state, joint)
        live = state.live
        n = len(live)
        bids = np.asarray(joint.bids, dtype=np.int64)

        auction_held = state.countdown == 0
        forced = state.forced_pending and auction_held
        if auction_held:
            winner_pos = resolve_auction(bids, rng, beta=self.params.beta)
            executed = live[winner_pos]
            winner_set = tuple(live[int(i)] for i in np.flatnonzero(bids == bids.max()))
            next_controller = executed
            next_countdown = self.params.tau - 1
        else:
            executed = state.controller
            winner_pos = live.index(executed)
            winner_set = ()
            next_controller = state.controller
            next_countdown = state.countdown - 1

        next_base, base_rewards, events = self.momdp.step(
            state.base, joint.actions[winner_pos], rng
        )

        rewards = np.array([base_rewards[i] for i in live], dtype=np.float64)
        penalties = np.zeros(n, dtype=np.float64)
        if auction_held:
            if self.params.penalty_model == PenaltyModel.ALL_PAY:
                penalties = self.params.rho * bids.astype(np.float64)
            else:
                penalties[winner_pos] = self.params.rho * float(bids[winner_pos])
            rewards = rewards - penalties

        new_mask = self.momdp.live_mask(next_base)
        removed = tuple(i for i in live if not new_mask[i])
        added = tuple(
            int(j) for j in np.flatnonzero(new_mask) if int(j) not in live
        )
        new_live = tuple(sorted([i for i in live if i not in removed] + list(added)))

        forced_pending = False
        if next_controller not in new_live and new_live:
            next_countdown = 0
            forced_pending = True

        next_state = BidGameState(
            base=next_base,
            controller=next_controller,
            countdown=next_countdown,
            live=new_live,
            forced_pending=forced_pending,
        )
        return StepOutcome(
            next_state=next_state,
            rewards=rewards,
            auction_held=auction_held,
            winner_set=winner_set if auction_held else (),
            executed_agent=executed,
            penalties=penalties,
            events=events,
            terminal=self.is_terminal(next_state),
            forced_reauction=forced,
            removed_agents=removed,
            added_agents=added,
        )

    # -- runtime objective changes ------------------------------------------

    def apply_objective_change(
        self,
        state: BidGameState,
        added: Sequence[dict | None] = (),
        removed: Sequence[int] = (),
        rng: np.random.Generator | None = None,
    ) -> BidGameState:
        for i in removed:
            if i not in state.live:
                raise ValueError(f"agent {i} is not live")
        surviving = [i for i in state.live if i not in set(removed)]
        if not surviving and not added:
            raise EmptyGameError("objective change would leave no live agents")

        base = state.base
        for i in removed:
            base = self.momdp.remove_objective(base, i)
        new_indices: list[int] = []
        for descriptor in added:
            if rng is None:
                rng = np.random.default_rng(0)
            base, idx = self.momdp.add_objective(base, descriptor, rng)
            new_indices.append(idx)

        live = tuple(sorted(surviving + new_indices))
        if not live:
            raise EmptyGameError("objective change would leave no live agents")
        countdown = state.countdown
        forced_pending = state.forced_pending
        if state.controller in set(removed):
            countdown = 0
            forced_pending = True
        return BidGameState(
            base=base,
            controller=state.controller,
            countdown=countdown,
            live=live,
            forced_pending=forced_pending,
        )


def wrap(momdp: MoMdp, params: AuctionParams) -> BiddingGame:
    """Construct the m-player bidding game over an environment."""
    return BiddingGame(momdp, params)
