import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bidrl.catfeeder import (
    CapacityError,
    CatFeederConfig,
    CatFeederEnv,
    CatFeederState,
    DeadAgentError,
    InvalidActionError,
    manhattan,
    move_targets,
    shaping_reward,
)

STAY = 4
UP = 0


def make_state(robot, targets, lives=None, headings=None, alive=None, step_index=0):
    m = len(targets)
    return CatFeederState(
        robot=np.array(robot, dtype=np.int64),
        cells=np.array(targets, dtype=np.int64),
        headings=np.array(headings if headings is not None else [0] * m, dtype=np.int64),
        life=np.array(lives if lives is not None else [50] * m, dtype=np.int64),
        alive=np.array(alive if alive is not None else [True] * m, dtype=bool),
        step_index=step_index,
    )


def quiet_config(**kw):
    defaults = dict(
        grid_size=10,
        num_targets=3,
        expiry_steps=50,
        max_episode_steps=200,
        moving_targets=False,
        distance_reward_scale=0.0,
        respawn=False,
    )
    defaults.update(kw)
    return CatFeederConfig(**defaults)


class TestReset:
    def test_paper_defaults(self):
        env = CatFeederEnv(CatFeederConfig())
        state = env.reset(np.random.default_rng(0))
        assert state.num_slots == 8
        assert state.alive.all()
        assert (state.life == 200).all()

    def test_distinct_cells(self):
        env = CatFeederEnv(CatFeederConfig(grid_size=4, num_targets=8))
        state = env.reset(np.random.default_rng(3))
        occupied = [tuple(state.robot)] + [tuple(c) for c in state.cells]
        assert len(set(occupied)) == len(occupied)

    def test_capacity_error(self):
        with pytest.raises(CapacityError):
            CatFeederEnv(CatFeederConfig(grid_size=1, num_targets=1)).reset(
                np.random.default_rng(0)
            )

    def test_same_seed_same_placement(self):
        env = CatFeederEnv(CatFeederConfig())
        a = env.reset(np.random.default_rng(42))
        b = env.reset(np.random.default_rng(42))
        assert a == b


class TestStep:
    def test_feed_reward_and_event(self):
        env = CatFeederEnv(quiet_config())
        state = make_state((5, 5), [(0, 0), (9, 9), (5, 6)])
        nxt, rewards, events = env.step(state, UP, np.random.default_rng(0))
        assert rewards[2] == 50.0
        assert events.fed == (2,)
        assert not nxt.alive[2]

    def test_expiry_penalty_and_event(self):
        env = CatFeederEnv(quiet_config())
        state = make_state((5, 5), [(0, 0), (9, 9)], lives=[1, 30])
        _, rewards, events = env.step(state, STAY, np.random.default_rng(0))
        assert rewards[0] == -50.0
        assert events.expired == (0,)

    def test_feed_beats_expiry_same_step(self):
        env = CatFeederEnv(quiet_config())
        state = make_state((5, 5), [(5, 6)], lives=[1])
        _, rewards, events = env.step(state, UP, np.random.default_rng(0))
        assert events.fed == (0,) and events.expired == ()
        assert rewards[0] == 50.0

    def test_idle_step_zero_rewards(self):
        env = CatFeederEnv(quiet_config())
        state = make_state((5, 5), [(0, 0), (9, 9), (1, 8)])
        _, rewards, events = env.step(state, STAY, np.random.default_rng(0))
        assert (rewards == 0).all()
        assert events.fed == () and events.expired == ()

    def test_invalid_action(self):
        env = CatFeederEnv(quiet_config())
        state = make_state((5, 5), [(0, 0), (9, 9), (1, 8)])
        with pytest.raises(InvalidActionError):
            env.step(state, 7, np.random.default_rng(0))

    def test_respawn_keeps_count(self):
        env = CatFeederEnv(quiet_config(respawn=True))
        state = make_state((5, 5), [(5, 6), (0, 0), (9, 0)])
        nxt, _, events = env.step(state, UP, np.random.default_rng(0))
        assert events.fed == (0,)
        assert nxt.alive.all()
        assert nxt.life[0] == 50
        assert tuple(nxt.cells[0]) != (5, 6) or True  # respawned somewhere
        assert events.spawned == (0,)

    def test_respawn_avoids_robot_cell(self):
        env = CatFeederEnv(quiet_config(grid_size=2, num_targets=1, respawn=True))
        rng = np.random.default_rng(5)
        state = make_state((0, 0), [(0, 1)])
        for _ in range(60):
            nxt, _, events = env.step(state, UP, rng)  # robot clipped at wall
            if events.fed:
                assert tuple(nxt.cells[0]) != tuple(nxt.robot)
            state = nxt if not env.is_terminal(nxt) else make_state((0, 0), [(0, 1)])


class TestMovement:
    def test_no_move_off_interval(self):
        env = CatFeederEnv(quiet_config(moving_targets=True))
        state = make_state((0, 0), [(4, 4), (5, 5), (6, 6)], step_index=3)
        nxt, _, _ = env.step(state, STAY, np.random.default_rng(0))
        assert np.array_equal(nxt.cells, state.cells)

    def test_move_on_interval(self):
        env = CatFeederEnv(
            quiet_config(moving_targets=True, direction_change_prob=0.0)
        )
        state = make_state((0, 0), [(4, 4)], headings=[0], step_index=5)
        nxt, _, _ = env.step(state, STAY, np.random.default_rng(0))
        assert tuple(nxt.cells[0]) == (4, 5)  # heading 0 is +y

    def test_walls_clip_targets(self):
        env = CatFeederEnv(
            quiet_config(moving_targets=True, direction_change_prob=0.0)
        )
        state = make_state((0, 0), [(4, 9)], headings=[0], step_index=0)
        nxt, _, _ = env.step(state, STAY, np.random.default_rng(0))
        assert tuple(nxt.cells[0]) == (4, 9)

    def test_zero_change_prob_keeps_headings(self):
        env = CatFeederEnv(
            quiet_config(moving_targets=True, direction_change_prob=0.0)
        )
        state = make_state((0, 0), [(4, 4), (2, 7), (7, 2)], headings=[1, 2, 3])
        rng = np.random.default_rng(0)
        for _ in range(40):
            state, _, _ = env.step(state, STAY, rng)
        assert state.headings.tolist() == [1, 2, 3]

    def test_resample_every_event_when_prob_one(self):
        # A resample draws uniformly over the 4 headings, so with prob 1 the
        # observable change rate is 3/4 per move event; check the 4-sigma band.
        env = CatFeederEnv(
            CatFeederConfig(
                grid_size=30,
                num_targets=20,
                expiry_steps=100,
                max_episode_steps=200,
                moving_targets=True,
                direction_change_prob=1.0,
            )
        )
        rng = np.random.default_rng(11)
        state = env.reset(rng)
        events = 0
        changes = 0
        while events < 1000:
            before = state.headings.copy()
            state = move_targets(env, state, rng)
            changes += int((state.headings != before).sum())
            events += state.num_slots
        p = 0.75
        bound = 4 * np.sqrt(p * (1 - p) / events)
        assert abs(changes / events - p) < bound


class TestShaping:
    def test_positive_step(self):
        assert shaping_reward(5, 4, 0.6) == pytest.approx(0.6)

    def test_negative_step(self):
        assert shaping_reward(4, 5, 0.6) == pytest.approx(-0.6)

    def test_zero_scale(self):
        assert shaping_reward(3, 9, 0.0) == 0.0

    def test_step_applies_shaping_to_live_targets(self):
        env = CatFeederEnv(quiet_config(distance_reward_scale=0.6))
        state = make_state((5, 5), [(5, 8), (5, 1), (0, 0)], alive=[True, True, False])
        _, rewards, _ = env.step(state, UP, np.random.default_rng(0))
        assert rewards[0] == pytest.approx(0.6)  # closer
        assert rewards[1] == pytest.approx(-0.6)  # farther
        assert rewards[2] == 0.0  # dead slot

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 100_000))
    def test_telescoping_over_alive_segment(self, seed):
        cfg = CatFeederConfig(
            grid_size=8,
            num_targets=3,
            expiry_steps=100,
            max_episode_steps=100,
            moving_targets=True,
            direction_change_prob=0.3,
            distance_reward_scale=0.6,
            respawn=False,
            target_reward=0.0,
            expiry_penalty=0.0,
        )
        env = CatFeederEnv(cfg)
        rng = np.random.default_rng(seed)
        state = env.reset(rng)
        start = state.copy()
        total = np.zeros(3)
        fed_or_expired = set()
        for _ in range(40):
            action = int(rng.integers(0, 5))
            state, rewards, events = env.step(state, action, rng)
            for i in events.fed + events.expired:
                fed_or_expired.add(i)
            total += rewards
        for i in range(3):
            if i in fed_or_expired:
                continue
            d0 = manhattan(start.robot, start.cells[i])
            dT = manhattan(state.robot, state.cells[i])
            assert total[i] == pytest.approx(0.6 * (d0 - dT), abs=1e-9)


class TestObserve:
    def test_displacement_normalization(self):
        env = CatFeederEnv(CatFeederConfig(grid_size=30, num_targets=2))
        state = make_state((0, 0), [(3, 4), (10, 10)], lives=[200, 200])
        obs = env.observe(state, 0)
        assert obs.own[0] == pytest.approx(0.1)
        assert obs.own[1] == pytest.approx(4 / 30)
        assert obs.own[2] == pytest.approx(1.0)
        assert obs.own[3] == 1.0

    def test_competitor_count(self):
        env = CatFeederEnv(CatFeederConfig())
        state = env.reset(np.random.default_rng(0))
        obs = env.observe(state, 3)
        assert obs.competitors.shape == (7, 4)

    def test_local_obs_hides_competitors(self):
        env = CatFeederEnv(CatFeederConfig(local_obs=True))
        state = env.reset(np.random.default_rng(0))
        assert env.observe(state, 0).competitors.shape == (0, 4)

    def test_dead_agent_raises(self):
        env = CatFeederEnv(quiet_config())
        state = make_state((5, 5), [(1, 1), (2, 2), (3, 3)], alive=[True, False, True])
        with pytest.raises(DeadAgentError):
            env.observe(state, 1)

    def test_dead_competitors_excluded(self):
        env = CatFeederEnv(quiet_config())
        state = make_state((5, 5), [(1, 1), (2, 2), (3, 3)], alive=[True, False, True])
        assert env.observe(state, 0).competitors.shape == (1, 4)


class TestInvariants:
    def test_conservation_under_respawn(self):
        cfg = CatFeederConfig(
            grid_size=6, num_targets=4, expiry_steps=10, max_episode_steps=300
        )
        env = CatFeederEnv(cfg)
        rng = np.random.default_rng(21)
        state = env.reset(rng)
        for _ in range(250):
            state, _, _ = env.step(state, int(rng.integers(0, 5)), rng)
            assert int(state.alive.sum()) == 4

    def test_life_decrements_by_one_and_never_negative(self):
        cfg = CatFeederConfig(
            grid_size=6, num_targets=3, expiry_steps=8, max_episode_steps=300
        )
        env = CatFeederEnv(cfg)
        rng = np.random.default_rng(22)
        state = env.reset(rng)
        for _ in range(200):
            before = state.copy()
            state, _, events = env.step(state, int(rng.integers(0, 5)), rng)
            assert (state.life >= 0).all()
            for i in range(3):
                if before.alive[i] and i not in events.fed and i not in events.spawned:
                    if state.alive[i]:
                        assert state.life[i] == before.life[i] - 1

    def test_score_identity_sparse(self):
        cfg = CatFeederConfig(
            grid_size=6,
            num_targets=3,
            expiry_steps=10,
            max_episode_steps=400,
            distance_reward_scale=0.0,
        )
        env = CatFeederEnv(cfg)
        rng = np.random.default_rng(23)
        state = env.reset(rng)
        fed = expired = 0
        pos_rewards = neg_rewards = 0
        for _ in range(400):
            state, rewards, events = env.step(state, int(rng.integers(0, 5)), rng)
            fed += len(events.fed)
            expired += len(events.expired)
            pos_rewards += int((rewards == 50.0).sum())
            neg_rewards += int((rewards == -50.0).sum())
        assert fed - expired == pos_rewards - neg_rewards
        assert fed == pos_rewards and expired == neg_rewards

    def test_robot_never_leaves_grid(self):
        cfg = CatFeederConfig(grid_size=4, num_targets=2, expiry_steps=20,
                              max_episode_steps=10_000)
        env = CatFeederEnv(cfg)
        rng = np.random.default_rng(24)
        state = env.reset(rng)
        for _ in range(500):
            state, _, _ = env.step(state, int(rng.integers(0, 5)), rng)
            assert 0 <= state.robot[0] < 4 and 0 <= state.robot[1] < 4
            assert (state.cells >= 0).all() and (state.cells < 4).all()


class TestObjectiveChanges:
    def test_add_objective(self):
        env = CatFeederEnv(quiet_config())
        state = make_state((5, 5), [(1, 1), (2, 2), (3, 3)])
        nxt, idx = env.add_objective(state, {"cell": (7, 7)}, np.random.default_rng(0))
        assert idx == 3
        assert nxt.num_slots == 4
        assert tuple(nxt.cells[3]) == (7, 7)
        assert state.num_slots == 3  # original untouched

    def test_remove_objective(self):
        env = CatFeederEnv(quiet_config())
        state = make_state((5, 5), [(1, 1), (2, 2), (3, 3)])
        nxt = env.remove_objective(state, 1)
        assert not nxt.alive[1]
        with pytest.raises(DeadAgentError):
            env.remove_objective(nxt, 1)
