import numpy as np
import pytest

from bidrl import config as cm
from bidrl.bidding import AuctionParams
from bidrl.catfeeder import CapacityError, CatFeederConfig
from bidrl.evaluation import (
    DEFAULT_SEEDS,
    evaluate,
    run_bidding_episodes,
    scaling_experiment,
    write_eval_report,
    write_sweep_csv,
)
from bidrl.harness import (
    MissingCheckpointError,
    ablation_sweep,
    compare_baselines,
    single_seed_config,
    train_run,
    with_auction,
)
from bidrl.momdp import StepEvents
from bidrl.policy import LayoutMismatchError, NetworkConfig, get_flat_params, save_checkpoint, set_flat_params
from bidrl.trainer import TrainMode, build_model, _ckpt_metadata

TINY_NET = NetworkConfig(
    actor_hidden=(16, 16),
    critic_hidden=(16, 16),
    target_embedding_dim=8,
    target_encoder_hidden=(8,),
    bid_levels=7,
)


def desk_env(**kw):
    defaults = dict(
        grid_size=10, num_targets=3, expiry_steps=60, max_episode_steps=200
    )
    defaults.update(kw)
    return CatFeederConfig(**defaults)


def make_checkpoint(tmp_path, env_cfg, params, mode=TrainMode.MULTI_AGENT_BIDDING,
                    net=TINY_NET, seed=0, zero=False):
    model = build_model(env_cfg, params, net, mode, seed)
    if zero:
        set_flat_params(model, np.zeros(get_flat_params(model).size))
    from bidrl.trainer import TrainConfig

    meta = _ckpt_metadata(env_cfg, params, TrainConfig(mode=mode), seed, None)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, model, meta)
    return path, model, meta


class TestScoreMetric:
    def test_fed_minus_expired(self):
        events = [StepEvents(fed=(0, 1)), StepEvents(fed=(2,), expired=(0,))]
        assert sum(e.score_delta for e in events) == 2

    def test_random_policy_scores_negative(self, tmp_path):
        env_cfg = desk_env(max_episode_steps=150)
        params = AuctionParams()
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, zero=True)
        report = evaluate((model, meta), env_cfg, params, episodes=100,
                          seeds=(1825,), greedy=False)
        assert report.mean_score < 0  # expiries dominate an aimless policy


class TestEvalReport:
    def test_default_seed_set(self):
        assert cm.EvalConfig().seeds == (1825, 410, 4507, 4013, 3658)
        assert DEFAULT_SEEDS == (1825, 410, 4507, 4013, 3658)

    def test_control_histogram_conservation(self, tmp_path):
        env_cfg = desk_env(max_episode_steps=100, expiry_steps=50)
        params = AuctionParams()
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=1)
        report = evaluate(path, env_cfg, params, episodes=4, seeds=(1825, 410))
        assert report.total_timesteps == 100 * 4 * 2
        assert report.control_histogram.shape == (3,)

    def test_bid_histogram_covers_all_levels(self, tmp_path):
        env_cfg = desk_env(max_episode_steps=60, expiry_steps=30)
        params = AuctionParams(beta=6)
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=2)
        report = evaluate(path, env_cfg, params, episodes=2, seeds=(1825,))
        assert report.bid_histogram.shape == (3, 7)
        # greedy deterministic bids: total count equals auctions x live agents
        assert report.bid_histogram.sum() == report.auction_count * 3

    def test_greedy_determinism(self, tmp_path):
        env_cfg = desk_env(max_episode_steps=80, expiry_steps=40)
        params = AuctionParams()
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=3)
        a = evaluate(path, env_cfg, params, episodes=3, seeds=(410,))
        b = evaluate(path, env_cfg, params, episodes=3, seeds=(410,))
        assert a.per_seed_scores == b.per_seed_scores
        assert np.array_equal(a.control_histogram, b.control_histogram)
        assert np.array_equal(a.bid_histogram, b.bid_histogram)
        assert [r.as_json() for r in a.auction_records] == [
            r.as_json() for r in b.auction_records
        ]

    def test_auction_records_structure(self, tmp_path):
        env_cfg = desk_env(max_episode_steps=40, expiry_steps=20)
        params = AuctionParams(tau=5)
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=4)
        scores, ch, bh, auctions, forced, recs = run_bidding_episodes(
            model, env_cfg, params, episodes=2, seed=1825
        )
        assert auctions == 2 * 40 / 5
        assert all(r.step % 5 == 0 for r in recs)
        assert all(len(r.bids) == 3 for r in recs)
        assert all(r.winner in (0, 1, 2) for r in recs)

    def test_beta_zero_uniform_control(self, tmp_path):
        env_cfg = desk_env(max_episode_steps=500)
        params = AuctionParams(beta=0)
        net = NetworkConfig(
            actor_hidden=(16, 16), critic_hidden=(16, 16),
            target_embedding_dim=8, target_encoder_hidden=(8,), bid_levels=1,
        )
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, net=net, seed=5)
        report = evaluate(path, env_cfg, params, episodes=4, seeds=(1825, 410))
        n_auctions = report.auction_count
        m = 3
        wins = report.control_histogram / params.tau
        bound = 4 * np.sqrt(n_auctions * (1 / m) * (1 - 1 / m))
        for agent in range(m):
            assert abs(wins[agent] - n_auctions / m) <= bound

    def test_report_files(self, tmp_path):
        env_cfg = desk_env(max_episode_steps=40, expiry_steps=20)
        params = AuctionParams()
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=6)
        report = evaluate(path, env_cfg, params, episodes=2, seeds=(1825,))
        out = tmp_path / "report"
        write_eval_report(report, out)
        for name in ("summary.csv", "scores.csv", "control_hist.csv",
                     "bid_hist.csv", "auctions.jsonl"):
            assert (out / name).exists()
        header = (out / "scores.csv").read_text().splitlines()[0]
        assert header == "seed,episode,score"


class TestScaling:
    def test_runs_at_larger_counts(self, tmp_path):
        env_cfg = desk_env()
        params = AuctionParams()
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=7)
        result = scaling_experiment(path, [4, 6], env_cfg, params,
                                    episodes=2, seeds=(1825,))
        assert result.param == "targets"
        assert [p.value for p in result.points] == [4, 6]
        for p in result.points:
            assert p.report.episodes == 2

    def test_training_count_matches_direct_evaluate(self, tmp_path):
        env_cfg = desk_env(max_episode_steps=80, expiry_steps=40)
        params = AuctionParams()
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=8)
        direct = evaluate(path, env_cfg, params, episodes=3, seeds=(410,))
        scaled = scaling_experiment(path, [3], env_cfg, params,
                                    episodes=3, seeds=(410,))
        assert scaled.points[0].report.per_seed_scores == direct.per_seed_scores

    def test_pooling_disabled_checkpoint_rejects_other_counts(self, tmp_path):
        env_cfg = desk_env()
        params = AuctionParams()
        net = NetworkConfig(
            actor_hidden=(16, 16), critic_hidden=(16, 16),
            target_embedding_dim=8, target_encoder_hidden=(8,),
            use_attention_pooling=False, bid_levels=7,
        )
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, net=net, seed=9)
        evaluate(path, env_cfg, params, episodes=1, seeds=(1825,))  # same count fine
        with pytest.raises(LayoutMismatchError):
            scaling_experiment(path, [4], env_cfg, params, episodes=1, seeds=(1825,))

    def test_capacity_error(self, tmp_path):
        env_cfg = desk_env(grid_size=3)
        params = AuctionParams()
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=10)
        with pytest.raises(CapacityError):
            scaling_experiment(path, [9], env_cfg, params, episodes=1, seeds=(1825,))

    def test_bid_level_mismatch_rejected(self, tmp_path):
        env_cfg = desk_env()
        params = AuctionParams(beta=6)
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=11)
        with pytest.raises(LayoutMismatchError):
            evaluate(path, env_cfg, AuctionParams(beta=3), episodes=1, seeds=(1825,))

    def test_sweep_csv(self, tmp_path):
        env_cfg = desk_env()
        params = AuctionParams()
        path, model, meta = make_checkpoint(tmp_path, env_cfg, params, seed=12)
        result = scaling_experiment(path, [3, 4], env_cfg, params,
                                    episodes=1, seeds=(1825,))
        write_sweep_csv(result, tmp_path / "sweep.csv")
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert lines[0] == "param,value,seed,mean_score,std_score,episodes"
        assert len(lines) == 3


def micro_run_config(method, name, **auction):
    cfg = cm.resolve(
        profile="desk",
        method=method,
        overrides=[
            "env.grid_size=6",
            "env.num_targets=2",
            "env.expiry_steps=8",
            "env.max_episode_steps=16",
            "train.iterations=2",
            "train.num_envs=2",
            "train.steps_per_rollout=8",
            "train.num_minibatches=2",
            "train.ppo_epochs=1",
            "train.eval_interval=1",
            "train.eval_episodes=2",
            "train.seeds=[5, 6]",
            "network.actor_hidden=[8, 8]",
            "network.critic_hidden=[8, 8]",
            "network.target_embedding_dim=4",
            "network.target_encoder_hidden=[8]",
            "eval.episodes=2",
            "eval.seeds=[1825]",
        ],
        run_name=name,
    )
    if auction:
        cfg = with_auction(cfg, **auction)
    return cfg


class TestAblationSweep:
    def test_invalid_param_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="bid_penalty"):
            ablation_sweep(micro_run_config("all-pay", "x"), "nonsense", [1],
                           tmp_path)

    def test_micro_sweep_trains_and_reports(self, tmp_path):
        cfg = micro_run_config("all-pay", "sweep")
        result = ablation_sweep(cfg, "bid_upper_bound", [0, 1], tmp_path,
                                seeds=(5,), eval_episodes=2)
        assert result.param == "bid_upper_bound"
        assert [(p.value, p.seed) for p in result.points] == [(0, 5), (1, 5)]
        assert (tmp_path / "bid_upper_bound_0" / "seed_5" / "ckpt_final.npz").exists()
        # rerun reuses the cached training
        again = ablation_sweep(cfg, "bid_upper_bound", [0, 1], tmp_path,
                               seeds=(5,), eval_episodes=2)
        assert [p.report.mean_score for p in again.points] == [
            p.report.mean_score for p in result.points
        ]


class TestCompareBaselines:
    def test_rows_and_budget_enforcement(self, tmp_path):
        dirs = []
        for method, name in (("all-pay", "ap"), ("single-sparse", "sp")):
            cfg = micro_run_config(method, name)
            d = tmp_path / name
            d.mkdir()
            import bidrl.config as cmod

            cmod.write_lock(cfg, d / "config.lock")
            for seed in cfg.train.seeds:
                train_run(cfg, seed, d / f"seed_{seed}")
            dirs.append(d)
        rows = compare_baselines(dirs, eval_episodes=2)
        assert [r["method"] for r in rows] == ["AllPay", "SingleSparse"]
        assert len({r["env_steps"] for r in rows}) == 1
        from bidrl.harness import write_compare_csv

        write_compare_csv(rows, tmp_path / "compare.csv")
        lines = (tmp_path / "compare.csv").read_text().splitlines()
        assert lines[0] == "method,mean,std,seeds,env_steps"
        assert len(lines) == 3

    def test_missing_checkpoint_listed(self, tmp_path):
        cfg = micro_run_config("all-pay", "ap")
        d = tmp_path / "ap"
        (d / "seed_5").mkdir(parents=True)
        import bidrl.config as cmod

        cmod.write_lock(cfg, d / "config.lock")
        cmod.write_lock(single_seed_config(cfg, 5), d / "seed_5" / "config.lock")
        (d / "seed_5" / "curve.csv").write_text("stub\n")
        with pytest.raises(MissingCheckpointError, match="ckpt_final.npz"):
            compare_baselines([d])

    def test_unequal_budgets_rejected(self, tmp_path):
        import bidrl.config as cmod
        from dataclasses import replace

        dirs = []
        for name, iters in (("a", 2), ("b", 3)):
            cfg = micro_run_config("all-pay", name)
            cfg = replace(cfg, train=replace(cfg.train, iterations=iters, seeds=(5,)))
            d = tmp_path / name
            train_run(cfg, 5, d)
            dirs.append(d)
        with pytest.raises(ValueError, match="budget"):
            compare_baselines(dirs, eval_episodes=1)
