"""Multi-objective MDP abstraction: vector rewards, per-objective events, discounted returns.

An environment exposes `m` reward components (one per objective). Instances are
independent and functional: `step(state, action, rng)` returns a new state, so many
instances can be advanced in parallel, each owning its own RNG stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence, runtime_checkable

import numpy as np


class LengthMismatchError(ValueError):
    """Reward vectors in one sequence do not share a common length."""


@dataclass(frozen=True)
class StepEvents:
    """Per-objective event flags emitted by an environment step.

    Carried alongside rewards so score-style metrics (completions minus
    expirations) never have to be re-derived from reward magnitudes.
    """

    fed: tuple[int, ...] = ()
    expired: tuple[int, ...] = ()
    spawned: tuple[int, ...] = ()

    @property
    def score_delta(self) -> int:
        return len(self.fed) - len(self.expired)


@dataclass
class Observation:
    """One agent's view: robot block, its own target block, competitor blocks.

    `competitors` is an unordered set of 4-feature rows (one per other live
    target); ordering carries no meaning and consumers must be permutation
    invariant when pooling is enabled.
    """

    robot: np.ndarray
    own: np.ndarray
    competitors: np.ndarray  # shape (k, 4); k may be 0

    def __post_init__(self) -> None:
        self.robot = np.asarray(self.robot, dtype=np.float64)
        self.own = np.asarray(self.own, dtype=np.float64)
        self.competitors = np.asarray(self.competitors, dtype=np.float64).reshape(-1, 4)


@runtime_checkable
class MoMdp(Protocol):
    """Contract consumed by the bidding-game wrapper and the training stack.

    Implementations must never mutate a caller-held state: `step` and
    `reset` return fresh state objects. All randomness flows through the
    `rng` arguments (numpy Generators), one stream per instance.
    """

    num_objectives: int
    action_count: int
    discount: float

    def reset(self, rng: np.random.Generator) -> Any: ...

    def step(
        self, state: Any, action: int, rng: np.random.Generator
    ) -> tuple[Any, np.ndarray, StepEvents]: ...

    def observe(self, state: Any, agent_index: int) -> Observation: ...

    def live_mask(self, state: Any) -> np.ndarray: ...

    def is_terminal(self, state: Any) -> bool: ...


def discounted_return(rewards: Sequence[np.ndarray], gamma: float) -> np.ndarray:
    """Per-objective discounted sum: component i is sum_t gamma^t * rewards[t][i].

    An empty sequence yields the all-zero vector (length taken as 0 then, so the
    result is a zero-length array only when no rewards were seen at all — callers
    holding a known m should pass at least the shape).
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    vectors = [np.asarray(r, dtype=np.float64) for r in rewards]
    if not vectors:
        return np.zeros(0, dtype=np.float64)
    m = vectors[0].shape
    for t, v in enumerate(vectors):
        if v.shape != m:
            raise LengthMismatchError(
                f"reward vector at step {t} has shape {v.shape}, expected {m}"
            )
    out = np.zeros(m, dtype=np.float64)
    scale = 1.0
    for v in vectors:
        out += scale * v
        scale *= gamma
    return out


@dataclass
class EpisodeTrace:
    """Reward/event record of one episode, enough to score it afterwards."""

    rewards: list[np.ndarray] = field(default_factory=list)
    events: list[StepEvents] = field(default_factory=list)

    def append(self, reward: np.ndarray, events: StepEvents) -> None:
        self.rewards.append(np.asarray(reward, dtype=np.float64))
        self.events.append(events)

    def score(self) -> int:
        """Completions minus expirations over the whole episode."""
        return sum(e.score_delta for e in self.events)

    def value(self, gamma: float) -> np.ndarray:
        return discounted_return(self.rewards, gamma)
