"""The batched stepper must be observationally identical to single instances."""

import numpy as np
import pytest

from bidrl.bidding import AuctionParams, BiddingGame, JointExtendedAction, PenaltyModel
from bidrl.catfeeder import CatFeederConfig, CatFeederEnv
from bidrl.policy import batch_observations
from bidrl.vecenv import VecBiddingGame, VecCatFeeder, VecSingleEnv


def spawn_rngs(seed, n):
    return [np.random.Generator(np.random.PCG64(c))
            for c in np.random.SeedSequence(seed).spawn(n)]


def test_arrival_mode_stays_single_instance():
    cfg = CatFeederConfig(grid_size=8, num_targets=2, expiry_steps=10,
                          max_episode_steps=40, arrival_rate=0.2)
    with pytest.raises(ValueError):
        VecCatFeeder(cfg, 2, spawn_rngs(0, 2))


def test_rng_count_must_match():
    cfg = CatFeederConfig(grid_size=8, num_targets=2, expiry_steps=10,
                          max_episode_steps=40)
    with pytest.raises(ValueError):
        VecCatFeeder(cfg, 3, spawn_rngs(0, 2))


@pytest.mark.parametrize("penalty", [PenaltyModel.ALL_PAY, PenaltyModel.WINNER_PAYS])
@pytest.mark.parametrize("respawn", [True, False])
def test_vec_bidding_matches_single_instances_bitwise(penalty, respawn):
    cfg = CatFeederConfig(
        grid_size=8, num_targets=3, expiry_steps=12, max_episode_steps=25,
        respawn=respawn, distance_reward_scale=0.6,
    )
    params = AuctionParams(tau=4, beta=5, rho=0.1, penalty_model=penalty)
    n_envs = 5
    vec = VecBiddingGame(VecCatFeeder(cfg, n_envs, spawn_rngs(123, n_envs)), params)
    vec.reset_all()

    game = BiddingGame(CatFeederEnv(cfg), params)
    single_rngs = spawn_rngs(123, n_envs)
    singles = [game.reset(r)[0] for r in single_rngs]

    plan = np.random.default_rng(7)
    for _ in range(120):
        actions = plan.integers(0, 5, size=(n_envs, 3))
        bids = plan.integers(0, 6, size=(n_envs, 3))
        out = vec.step(actions, bids)
        for e in range(n_envs):
            state = singles[e]
            live = list(state.live)
            joint = JointExtendedAction(
                actions=tuple(int(a) for a in actions[e][live]),
                bids=tuple(int(b) for b in bids[e][live]),
            )
            o = game.step(state, joint, single_rngs[e])
            assert o.auction_held == out.auction_held[e]
            assert o.executed_agent == out.executed[e]
            assert np.array_equal(
                np.asarray(o.rewards), out.rewards[e][live]
            ), "rewards must be bitwise equal"
            assert np.array_equal(np.asarray(o.penalties), out.penalties[e][live])
            assert o.terminal == out.done[e]
            if o.terminal:
                singles[e], _ = game.reset(single_rngs[e])
            else:
                assert o.next_state.base == vec.env.state_of(e)
                singles[e] = o.next_state


def test_vec_observations_match_single_observe():
    cfg = CatFeederConfig(grid_size=9, num_targets=4, expiry_steps=15,
                          max_episode_steps=50)
    params = AuctionParams()
    vec = VecBiddingGame(VecCatFeeder(cfg, 3, spawn_rngs(9, 3)), params)
    vec.reset_all()
    env = CatFeederEnv(cfg)

    direct, comp, mask = vec.observations()
    for e in range(3):
        state = vec.env.state_of(e)
        obs = [env.observe(state, i) for i in range(4)]
        batch = batch_observations(obs)
        np.testing.assert_allclose(direct[e], batch.direct, atol=0)
        np.testing.assert_allclose(comp[e], batch.competitors, atol=0)
        assert np.array_equal(mask[e], batch.mask)


def test_vec_flat_observations_match_observe_flat():
    cfg = CatFeederConfig(grid_size=9, num_targets=3, expiry_steps=15,
                          max_episode_steps=50)
    vec = VecCatFeeder(cfg, 2, spawn_rngs(11, 2))
    vec.reset_all()
    env = CatFeederEnv(cfg)
    flat = vec.flat_observations()
    for e in range(2):
        np.testing.assert_allclose(flat[e], env.observe_flat(vec.state_of(e)), atol=0)


def test_vec_single_env_scalar_is_reward_sum():
    cfg = CatFeederConfig(grid_size=8, num_targets=3, expiry_steps=10,
                          max_episode_steps=30, distance_reward_scale=0.6)
    # sparse baseline view: per-objective shaping forced off
    env = VecSingleEnv(cfg, 2, spawn_rngs(21, 2))
    ref = VecCatFeeder(
        CatFeederConfig(grid_size=8, num_targets=3, expiry_steps=10,
                        max_episode_steps=30, distance_reward_scale=0.0),
        2, spawn_rngs(21, 2),
    )
    env.reset_all()
    ref.reset_all()
    plan = np.random.default_rng(3)
    for _ in range(60):
        actions = plan.integers(0, 5, size=2)
        scalar, fed, expired, done = env.step(actions)
        rewards, rfed, rexp, rterm = ref.step(actions)
        assert np.array_equal(scalar, rewards.sum(axis=1))
        assert np.array_equal(fed, rfed) and np.array_equal(expired, rexp)
        for e in np.flatnonzero(rterm):
            ref.reset_env(e)


def test_auto_reset_controller_and_countdown():
    cfg = CatFeederConfig(grid_size=6, num_targets=2, expiry_steps=5,
                          max_episode_steps=6)
    vec = VecBiddingGame(VecCatFeeder(cfg, 2, spawn_rngs(33, 2)), AuctionParams())
    vec.reset_all()
    for _ in range(6):
        out = vec.step(np.full((2, 2), 4), np.zeros((2, 2), dtype=int))
    assert out.done.all()
    assert (vec.countdown == 0).all()
    assert (vec.controller == 0).all()
    assert (vec.env.step_index == 0).all()
