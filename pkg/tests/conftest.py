"""Shared test fixtures and a minimal deterministic base environment."""

from __future__ import annotations

import numpy as np
import pytest

from bidrl.momdp import Observation, StepEvents


class CounterMoMdp:
    """Tiny deterministic environment for exercising the bidding wrapper.

    State is an integer counter; action 1 increments, action 0 decrements.
    Objective i earns the constant `rewards[i]` every step, never terminates,
    and draws no randomness (reset starts at 0).
    """

    action_count = 2
    discount = 0.9

    def __init__(self, rewards=(1.0, 2.0, 3.0)):
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.num_objectives = len(rewards)
        self._alive = np.ones(self.num_objectives, dtype=bool)

    def reset(self, rng):
        return 0

    def step(self, state, action, rng):
        nxt = state + (1 if action == 1 else -1)
        return nxt, self.rewards[: self._alive.size].copy() * self._alive, StepEvents()

    def observe(self, state, agent_index):
        return Observation(
            robot=np.array([float(state), 0.0]),
            own=np.zeros(4),
            competitors=np.zeros((0, 4)),
        )

    def live_mask(self, state):
        return self._alive.copy()

    def is_terminal(self, state):
        return False

    def add_objective(self, state, descriptor, rng):
        self.rewards = np.append(self.rewards, float((descriptor or {}).get("reward", 1.0)))
        self._alive = np.append(self._alive, True)
        self.num_objectives = self._alive.size
        return state, self._alive.size - 1

    def remove_objective(self, state, index):
        self._alive[index] = False
        return state


@pytest.fixture
def counter_env():
    return CounterMoMdp()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
