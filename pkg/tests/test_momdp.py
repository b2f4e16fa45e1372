import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bidrl.momdp import (
    EpisodeTrace,
    LengthMismatchError,
    StepEvents,
    discounted_return,
)


def loop_oracle(rewards, gamma):
    """Independent summation: explicit per-component double loop."""
    if not rewards:
        return np.zeros(0)
    m = len(rewards[0])
    out = np.zeros(m)
    for i in range(m):
        for t, vec in enumerate(rewards):
            out[i] += gamma**t * vec[i]
    return out


def test_empty_sequence_is_zero():
    assert discounted_return([], 0.9).tolist() == []


def test_geometric_sum():
    result = discounted_return([[1.0], [1.0], [1.0]], 0.5)
    assert result.shape == (1,)
    assert result[0] == pytest.approx(1.75, abs=0)


def test_matches_loop_oracle_on_random_table():
    rng = np.random.default_rng(7)
    rewards = [rng.normal(size=3) for _ in range(5)]
    expected = loop_oracle(rewards, 0.99)
    got = discounted_return(rewards, 0.99)
    assert np.max(np.abs(got - expected)) < 1e-12


def test_length_mismatch_raises():
    with pytest.raises(LengthMismatchError):
        discounted_return([[1.0, 2.0], [1.0]], 0.9)


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.5, 1.5])
def test_gamma_out_of_range(gamma):
    with pytest.raises(ValueError):
        discounted_return([[1.0]], gamma)


@settings(max_examples=60, deadline=None)
@given(
    steps=st.integers(1, 8),
    m=st.integers(1, 3),
    a=st.floats(-5, 5),
    b=st.floats(-5, 5),
    gamma=st.floats(0.05, 0.95),
    seed=st.integers(0, 10_000),
)
def test_linearity(steps, m, a, b, gamma, seed):
    rng = np.random.default_rng(seed)
    r = [rng.uniform(-10, 10, size=m) for _ in range(steps)]
    s = [rng.uniform(-10, 10, size=m) for _ in range(steps)]
    combined = discounted_return([a * x + b * y for x, y in zip(r, s)], gamma)
    separate = a * discounted_return(r, gamma) + b * discounted_return(s, gamma)
    assert np.max(np.abs(combined - separate)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(
    total=st.integers(2, 40),
    cut=st.integers(1, 39),
    gamma=st.floats(0.1, 0.99),
    seed=st.integers(0, 10_000),
)
def test_truncation_bound(total, cut, gamma, seed):
    cut = min(cut, total - 1)
    r_max = 3.0
    rng = np.random.default_rng(seed)
    rewards = [rng.uniform(-r_max, r_max, size=2) for _ in range(total)]
    full = discounted_return(rewards, gamma)
    truncated = discounted_return(rewards[:cut], gamma)
    bound = gamma**cut * r_max / (1.0 - gamma)
    assert np.max(np.abs(full - truncated)) <= bound + 1e-12


def test_episode_trace_score_and_value():
    trace = EpisodeTrace()
    trace.append([1.0, 0.0], StepEvents(fed=(0,)))
    trace.append([0.0, -1.0], StepEvents(expired=(1,)))
    trace.append([0.0, 0.0], StepEvents(fed=(0, 1)))
    assert trace.score() == 2  # 3 fed - 1 expired
    assert np.allclose(trace.value(0.5), [1.0, -0.5])
