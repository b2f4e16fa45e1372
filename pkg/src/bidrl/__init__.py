"""Auction-based compositional multi-objective RL.

Per-objective policies bid for control of a shared actuator; the highest
bidder's action executes for a fixed window, with penalties keeping bids
honest. Training is concurrent PPO with one shared attention-pooling
actor-critic across all agents.
"""

from .bidding import (
    AuctionParams,
    BiddingGame,
    BidGameState,
    JointExtendedAction,
    PenaltyModel,
    StepOutcome,
    resolve_auction,
    wrap,
)
from .catfeeder import CatFeederConfig, CatFeederEnv, CatFeederState, shaping_reward
from .config import EvalConfig, RunConfig, resolve
from .evaluation import EvalReport, SweepResult, evaluate, scaling_experiment
from .harness import ablation_sweep, compare_baselines, train_run
from .momdp import MoMdp, Observation, StepEvents, discounted_return
from .policy import (
    ActorCritic,
    NetworkConfig,
    ObservationLayout,
    load_checkpoint,
    save_checkpoint,
)
from .trainer import (
    RolloutBuffer,
    TrainConfig,
    TrainMode,
    collect_rollouts,
    compute_gae,
    ppo_update,
    train,
    train_single_baseline,
)

__version__ = "0.1.0"

__all__ = [
    "ActorCritic",
    "AuctionParams",
    "BidGameState",
    "BiddingGame",
    "CatFeederConfig",
    "CatFeederEnv",
    "CatFeederState",
    "EvalConfig",
    "EvalReport",
    "JointExtendedAction",
    "MoMdp",
    "NetworkConfig",
    "Observation",
    "ObservationLayout",
    "PenaltyModel",
    "RolloutBuffer",
    "RunConfig",
    "StepEvents",
    "StepOutcome",
    "SweepResult",
    "TrainConfig",
    "TrainMode",
    "ablation_sweep",
    "collect_rollouts",
    "compare_baselines",
    "compute_gae",
    "discounted_return",
    "evaluate",
    "load_checkpoint",
    "ppo_update",
    "resolve",
    "resolve_auction",
    "save_checkpoint",
    "scaling_experiment",
    "shaping_reward",
    "train",
    "train_run",
    "train_single_baseline",
    "wrap",
]
