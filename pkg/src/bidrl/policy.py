"""Shared actor-critic with attention pooling over a variable competitor set.

One parameter set serves every agent. Each competitor block is embedded by a
small MLP; softmax-normalized dot products against a learned query weight the
embeddings into a fixed-size vector, so the trunk input width is independent of
how many competitors exist. With pooling disabled the competitor blocks are
concatenated in fixed slot order instead (fixed-width trunk, no resizing).

The action and bid heads are independent categoricals; the joint log-prob is
the sum of the two head log-probs.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .momdp import Observation

CHECKPOINT_FORMAT_VERSION = 1


class LayoutMismatchError(ValueError):
    """Checkpoint was built for a different observation layout."""


class CheckpointError(ValueError):
    """Checkpoint file is unreadable, corrupt, or from an unknown version."""


@dataclass(frozen=True)
class NetworkConfig:
    actor_hidden: tuple[int, ...] = (128, 128, 128, 128)
    critic_hidden: tuple[int, ...] = (256, 256, 256, 256)
    target_embedding_dim: int = 64
    target_encoder_hidden: tuple[int, ...] = (64, 64)
    use_attention_pooling: bool = True
    bid_levels: int = 7

    def __post_init__(self) -> None:
        object.__setattr__(self, "actor_hidden", tuple(self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(self.critic_hidden))
        object.__setattr__(
            self, "target_encoder_hidden", tuple(self.target_encoder_hidden)
        )
        if self.target_embedding_dim < 1:
            raise ValueError("target_embedding_dim must be positive")
        if self.bid_levels < 1:
            raise ValueError("bid_levels must be positive")


@dataclass(frozen=True)
class ObservationLayout:
    """Shape contract between an environment view and the network.

    `direct_dim` counts the features that bypass pooling (robot block plus the
    agent's own target block, or the whole flat vector for monolithic
    baselines). `num_competitors` is None when pooling handles a variable set,
    and the fixed set size otherwise.
    """

    direct_dim: int
    competitor_dim: int = 4
    num_competitors: int | None = None
    action_count: int = 5
    has_bid_head: bool = True

    def trunk_input_dim(self, config: NetworkConfig) -> int:
        if config.use_attention_pooling:
            return self.direct_dim + config.target_embedding_dim
        return self.direct_dim + (self.num_competitors or 0) * self.competitor_dim


@dataclass
class ObsBatch:
    """Stacked observations: direct features plus padded competitor rows."""

    direct: np.ndarray  # (B, direct_dim)
    competitors: np.ndarray  # (B, K, competitor_dim)
    mask: np.ndarray  # (B, K) bool, True where the row is a real competitor

    @property
    def size(self) -> int:
        return self.direct.shape[0]


def batch_observations(observations: Sequence[Observation]) -> ObsBatch:
    """Stack per-agent observations, padding competitor sets to the max count."""
    b = len(observations)
    direct = np.stack(
        [np.concatenate([o.robot, o.own]) for o in observations]
    ).astype(np.float32)
    k = max((o.competitors.shape[0] for o in observations), default=0)
    comp = np.zeros((b, k, 4), dtype=np.float32)
    mask = np.zeros((b, k), dtype=bool)
    for i, o in enumerate(observations):
        n = o.competitors.shape[0]
        if n:
            comp[i, :n] = o.competitors
            mask[i, :n] = True
    return ObsBatch(direct=direct, competitors=comp, mask=mask)


def _mlp(sizes: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers.append(nn.Linear(a, b))
        layers.append(nn.Tanh())
    return nn.Sequential(*layers)


def _orthogonal_init(module: nn.Module, gain: float) -> None:
    for layer in module.modules():
        if isinstance(layer, nn.Linear):
            nn.init.orthogonal_(layer.weight, gain)
            nn.init.zeros_(layer.bias)


class ActorCritic(nn.Module):
    """Actor trunk + action/bid heads and a critic trunk + value head, sharing
    one competitor encoder and query vector."""

    def __init__(
        self,
        config: NetworkConfig,
        layout: ObservationLayout,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.config = config
        self.layout = layout
        self._dtype = dtype

        embed = config.target_embedding_dim
        enc_sizes = [layout.competitor_dim, *config.target_encoder_hidden]
        self.encoder = _mlp(enc_sizes)
        self.encoder_out = nn.Linear(enc_sizes[-1], embed)
        self.query = nn.Parameter(torch.zeros(embed))

        trunk_in = layout.trunk_input_dim(config)
        self.actor_trunk = _mlp([trunk_in, *config.actor_hidden])
        self.action_head = nn.Linear(config.actor_hidden[-1], layout.action_count)
        self.bid_head = (
            nn.Linear(config.actor_hidden[-1], config.bid_levels)
            if layout.has_bid_head
            else None
        )
        self.critic_trunk = _mlp([trunk_in, *config.critic_hidden])
        self.value_head = nn.Linear(config.critic_hidden[-1], 1)
        self.to(dtype)

    def initialize(self, seed: int) -> None:
        """Orthogonal weights (small gain on the output heads), zero biases,
        unit-scale query; fully determined by the seed."""
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            _orthogonal_init(self.encoder, np.sqrt(2.0))
            _orthogonal_init(self.encoder_out, np.sqrt(2.0))
            _orthogonal_init(self.actor_trunk, np.sqrt(2.0))
            _orthogonal_init(self.critic_trunk, np.sqrt(2.0))
            _orthogonal_init(self.action_head, 0.01)
            if self.bid_head is not None:
                _orthogonal_init(self.bid_head, 0.01)
            _orthogonal_init(self.value_head, 1.0)
            with torch.no_grad():
                q = torch.randn(self.query.shape, dtype=torch.float64)
                self.query.copy_(
                    (q / np.sqrt(self.query.shape[0])).to(self.query.dtype)
                )

    # -- forward pieces ------------------------------------------------------

    def pool(self, competitors: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Softmax-weighted sum of competitor embeddings; empty sets pool to 0."""
        b, k = competitors.shape[0], competitors.shape[1]
        embed = self.config.target_embedding_dim
        if k == 0:
            return torch.zeros(b, embed, dtype=self._dtype, device=competitors.device)
        e = self.encoder_out(self.encoder(competitors))  # (B, K, E)
        scores = e @ self.query  # (B, K)
        lowest = torch.finfo(self._dtype).min
        masked = torch.where(mask, scores, torch.full_like(scores, lowest))
        any_valid = mask.any(dim=1)
        row_max = masked.max(dim=1).values
        row_max = torch.where(any_valid, row_max, torch.zeros_like(row_max))
        z = torch.exp(masked - row_max.unsqueeze(1)) * mask.to(self._dtype)
        denom = z.sum(dim=1, keepdim=True)
        weights = z / torch.where(denom > 0, denom, torch.ones_like(denom))
        return (weights.unsqueeze(-1) * e).sum(dim=1)

    def trunk_input(
        self, direct: torch.Tensor, competitors: torch.Tensor, mask: torch.Tensor
    ) -> torch.Tensor:
        if self.config.use_attention_pooling:
            pooled = self.pool(competitors, mask)
            return torch.cat([direct, pooled], dim=1)
        fixed = self.layout.num_competitors or 0
        if competitors.shape[1] != fixed:
            raise LayoutMismatchError(
                f"expected exactly {fixed} competitor blocks without pooling, "
                f"got {competitors.shape[1]}"
            )
        flat = (competitors * mask.unsqueeze(-1).to(self._dtype)).reshape(
            competitors.shape[0], -1
        )
        return torch.cat([direct, flat], dim=1)

    def actor_forward(
        self, direct: torch.Tensor, competitors: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        x = self.trunk_input(direct, competitors, mask)
        h = self.actor_trunk(x)
        bid_logits = self.bid_head(h) if self.bid_head is not None else None
        return self.action_head(h), bid_logits

    def critic_forward(
        self, direct: torch.Tensor, competitors: torch.Tensor, mask: torch.Tensor
    ) -> torch.Tensor:
        x = self.trunk_input(direct, competitors, mask)
        return self.value_head(self.critic_trunk(x)).squeeze(-1)

    def forward_all(
        self, direct: torch.Tensor, competitors: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor | None, torch.Tensor]:
        x = self.trunk_input(direct, competitors, mask)
        h = self.actor_trunk(x)
        bid_logits = self.bid_head(h) if self.bid_head is not None else None
        value = self.value_head(self.critic_trunk(x)).squeeze(-1)
        return self.action_head(h), bid_logits, value

    def evaluate_actions(
        self,
        direct: torch.Tensor,
        competitors: torch.Tensor,
        mask: torch.Tensor,
        actions: torch.Tensor,
        bids: torch.Tensor | None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Differentiable (log_prob, entropy, value) of stored action/bid pairs."""
        action_logits, bid_logits, value = self.forward_all(direct, competitors, mask)
        log_p = torch.log_softmax(action_logits, dim=1)
        logp = log_p.gather(1, actions.unsqueeze(1)).squeeze(1)
        probs = log_p.exp()
        entropy = -(probs * log_p).sum(dim=1)
        if bid_logits is not None:
            if bids is None:
                raise ValueError("bid head present but no bids supplied")
            log_b = torch.log_softmax(bid_logits, dim=1)
            logp = logp + log_b.gather(1, bids.unsqueeze(1)).squeeze(1)
            entropy = entropy + -(log_b.exp() * log_b).sum(dim=1)
        return logp, entropy, value

    # -- numpy-facing convenience -------------------------------------------

    def _tensors(self, batch: ObsBatch) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        return (
            torch.as_tensor(batch.direct, dtype=self._dtype),
            torch.as_tensor(batch.competitors, dtype=self._dtype),
            torch.as_tensor(batch.mask, dtype=torch.bool),
        )

    @torch.no_grad()
    def logits_values(
        self, batch: ObsBatch
    ) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        action_logits, bid_logits, value = self.forward_all(*self._tensors(batch))
        return (
            action_logits.numpy().astype(np.float64),
            None if bid_logits is None else bid_logits.numpy().astype(np.float64),
            value.numpy().astype(np.float64),
        )

    @torch.no_grad()
    def attention_pool(self, competitors: np.ndarray) -> np.ndarray:
        """Pool one competitor set (k, 4) to a fixed embedding vector."""
        comp = np.asarray(competitors, dtype=np.float64).reshape(1, -1, 4)
        mask = np.ones(comp.shape[:2], dtype=bool)
        out = self.pool(
            torch.as_tensor(comp, dtype=self._dtype),
            torch.as_tensor(mask, dtype=torch.bool),
        )
        return out.numpy()[0].astype(np.float64)


# -- categorical sampling on numpy logits -------------------------------------


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row; inverse-CDF over the softmax distribution."""
    log_p = log_softmax_np(logits)
    probs = np.exp(log_p)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(logits.shape[0])
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, logits.shape[-1] - 1).astype(np.int64)


def entropy_np(logits: np.ndarray) -> np.ndarray:
    log_p = log_softmax_np(logits)
    return -(np.exp(log_p) * log_p).sum(axis=-1)


@dataclass
class SampleResult:
    actions: np.ndarray
    bids: np.ndarray | None
    log_probs: np.ndarray
    entropy: np.ndarray
    values: np.ndarray


def sample_policy(
    model: ActorCritic, batch: ObsBatch, rng: np.random.Generator
) -> SampleResult:
    """Sample (action, bid) per row; log-prob/entropy are sums over the heads.

    Draw order: one uniform per row for the action head, then one per row for
    the bid head (when present), from the single sampling stream.
    """
    action_logits, bid_logits, values = model.logits_values(batch)
    actions = sample_categorical(action_logits, rng)
    log_pa = log_softmax_np(action_logits)
    log_probs = np.take_along_axis(log_pa, actions[:, None], axis=1)[:, 0]
    entropy = entropy_np(action_logits)
    bids = None
    if bid_logits is not None:
        bids = sample_categorical(bid_logits, rng)
        log_pb = log_softmax_np(bid_logits)
        log_probs = log_probs + np.take_along_axis(log_pb, bids[:, None], axis=1)[:, 0]
        entropy = entropy + entropy_np(bid_logits)
    return SampleResult(
        actions=actions, bids=bids, log_probs=log_probs, entropy=entropy, values=values
    )


def greedy_policy(model: ActorCritic, batch: ObsBatch) -> tuple[np.ndarray, np.ndarray | None]:
    """Argmax action and bid (ties resolved to the lowest index)."""
    action_logits, bid_logits, _ = model.logits_values(batch)
    actions = action_logits.argmax(axis=1)
    bids = None if bid_logits is None else bid_logits.argmax(axis=1)
    return actions.astype(np.int64), None if bids is None else bids.astype(np.int64)


# -- flattened parameter access ------------------------------------------------


def parameter_blocks(model: ActorCritic) -> dict[str, torch.Tensor]:
    return dict(model.named_parameters())


def get_flat_params(model: ActorCritic) -> np.ndarray:
    return np.concatenate(
        [p.detach().numpy().ravel() for _, p in sorted(parameter_blocks(model).items())]
    )


def set_flat_params(model: ActorCritic, flat: np.ndarray) -> None:
    offset = 0
    with torch.no_grad():
        for _, p in sorted(parameter_blocks(model).items()):
            n = p.numel()
            chunk = torch.as_tensor(
                flat[offset : offset + n], dtype=p.dtype
            ).reshape(p.shape)
            p.copy_(chunk)
            offset += n
    if offset != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, model needs {offset}")


def parameter_count(config: NetworkConfig, layout: ObservationLayout) -> int:
    return sum(p.numel() for p in ActorCritic(config, layout).parameters())


# -- checkpoint io ---------------------------------------------------------------


def _params_checksum(arrays: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode())
        digest.update(arrays[name].tobytes())
    return digest.hexdigest()


def save_checkpoint(path, model: ActorCritic, metadata: dict | None = None) -> None:
    arrays = {
        name: p.detach().numpy().copy() for name, p in parameter_blocks(model).items()
    }
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "network": asdict(model.config),
        "layout": asdict(model.layout),
        "dtype": str(model._dtype).replace("torch.", ""),
        "checksum": _params_checksum(arrays),
        "metadata": metadata or {},
    }
    buf = io.BytesIO()
    np.savez(
        buf,
        __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        **arrays,
    )
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expected_layout: ObservationLayout | None = None):
    """Rebuild the model; returns (model, metadata dict).

    Rejects unknown format versions, corrupted parameter bytes, and (when
    `expected_layout` is given) any layout mismatch.
    """
    with np.load(path) as data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path} is not a policy checkpoint")
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {meta.get('format_version')}"
        )
    if meta["checksum"] != _params_checksum(arrays):
        raise CheckpointError(f"{path}: parameter checksum mismatch")
    net = meta["network"]
    config = NetworkConfig(
        actor_hidden=tuple(net["actor_hidden"]),
        critic_hidden=tuple(net["critic_hidden"]),
        target_embedding_dim=net["target_embedding_dim"],
        target_encoder_hidden=tuple(net["target_encoder_hidden"]),
        use_attention_pooling=net["use_attention_pooling"],
        bid_levels=net["bid_levels"],
    )
    lay = meta["layout"]
    layout = ObservationLayout(
        direct_dim=lay["direct_dim"],
        competitor_dim=lay["competitor_dim"],
        num_competitors=lay["num_competitors"],
        action_count=lay["action_count"],
        has_bid_head=lay["has_bid_head"],
    )
    if expected_layout is not None and layout != expected_layout:
        raise LayoutMismatchError(
            f"checkpoint layout {layout} does not match expected {expected_layout}"
        )
    dtype = getattr(torch, meta["dtype"])
    model = ActorCritic(config, layout, dtype=dtype)
    state = {name: torch.as_tensor(arr) for name, arr in arrays.items()}
    model.load_state_dict(state)
    return model, meta["metadata"]
