"""Encoder configuration and parameter containers for the reward model and the ranker."""

import logging
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, model_validator

from permurank.autodiff.tape import Tape, Tensor
from permurank.errors import ContractViolationError

log = logging.getLogger(__name__)

EMBED_INIT_STD = 0.02


class EncoderConfig(BaseModel):
    """Shape of the transformer-style set encoder."""

    depth: int = 2
    """Number of encoder blocks."""

    width: int = 32
    """Embedding dimension d."""

    heads: int = 4
    """Attention heads; must divide the width."""

    ffn_multiplier: int = 2
    """Hidden size of the feed-forward layer as a multiple of the width."""

    use_cls: bool = True
    """Prepend a learned CLS token (the reward model reads its output)."""

    @model_validator(mode="after")
    def _check_shape(self) -> "EncoderConfig":
        if self.depth < 1:
            _msg = f"depth must be at least 1, got {self.depth}"
            raise ValueError(_msg)
        if self.width < 1 or self.heads < 1 or self.width % self.heads != 0:
            _msg = f"width {self.width} must be a positive multiple of heads {self.heads}"
            raise ValueError(_msg)
        if self.ffn_multiplier < 1:
            _msg = f"ffn_multiplier must be at least 1, got {self.ffn_multiplier}"
            raise ValueError(_msg)
        return self

    @property
    def head_width(self) -> int:
        """Per-head width d / heads."""
        return self.width // self.heads


@dataclass
class ModelParams:
    """Named float64 arrays plus the configuration that gives them meaning."""

    kind: str
    encoder: EncoderConfig
    query_dim: int
    item_dim: int
    max_len: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def bind(self, tape: Tape, *, trainable: bool = True) -> "BoundParams":
        """Place every array on the tape, as leaves (trainable) or constants (frozen).

        Args:
            tape: Tape of the current forward pass.
            trainable: When False the arrays enter as constants and receive no gradient.

        Returns:
            BoundParams: Name to tensor mapping tied to this parameter set.

        """
        tensors = {name: tape.leaf(value, requires_grad=trainable) for name, value in self.arrays.items()}
        return BoundParams(params=self, tensors=tensors)

    def copy(self) -> "ModelParams":
        """Deep copy of the arrays with the same configuration."""
        return type(self)(
            kind=self.kind,
            encoder=self.encoder.model_copy(),
            query_dim=self.query_dim,
            item_dim=self.item_dim,
            max_len=self.max_len,
            arrays={name: value.copy() for name, value in self.arrays.items()},
        )

    def identical_to(self, other: "ModelParams") -> bool:
        """Bit-for-bit comparison of every array and of the configuration."""
        if self.kind != other.kind or self.encoder != other.encoder:
            return False
        if list(self.arrays) != list(other.arrays):
            return False
        return all(
            self.arrays[name].shape == other.arrays[name].shape
            and self.arrays[name].tobytes() == other.arrays[name].tobytes()
            for name in self.arrays
        )

    def all_finite(self) -> bool:
        """True when no array holds NaN or Inf."""
        return all(bool(np.all(np.isfinite(value))) for value in self.arrays.values())

    def size(self) -> int:
        """Total number of scalar parameters."""
        return int(sum(value.size for value in self.arrays.values()))


class RewardParams(ModelParams):
    """Parameters of g(q, {i}_L, π): encoder, CLS token, position table P and readout v."""


class RankerParams(ModelParams):
    """Parameters of f(q, {i}_L): encoder and readout w; no position table."""


@dataclass
class BoundParams(Mapping[str, Tensor]):
    """Parameters placed on one tape."""

    params: ModelParams
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def encoder(self) -> EncoderConfig:
        """Encoder configuration of the bound parameters."""
        return self.params.encoder


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _encoder_arrays(rng: np.random.Generator, cfg: EncoderConfig, input_dim: int) -> dict[str, np.ndarray]:
    d, heads, dh = cfg.width, cfg.heads, cfg.head_width
    hidden = d * cfg.ffn_multiplier
    arrays: dict[str, np.ndarray] = {
        "proj.w": glorot(rng, (input_dim, d), input_dim, d),
        "proj.b": np.zeros(d),
    }
    for layer in range(cfg.depth):
        prefix = f"layer{layer}"
        arrays[f"{prefix}.ln1.g"] = np.ones(d)
        arrays[f"{prefix}.ln1.b"] = np.zeros(d)
        for name in ("wq", "wk", "wv"):
            arrays[f"{prefix}.attn.{name}"] = glorot(rng, (heads, d, dh), d, d)
        arrays[f"{prefix}.attn.wo"] = glorot(rng, (heads, dh, d), d, d)
        arrays[f"{prefix}.ln2.g"] = np.ones(d)
        arrays[f"{prefix}.ln2.b"] = np.zeros(d)
        arrays[f"{prefix}.ffn.w1"] = glorot(rng, (d, hidden), d, hidden)
        arrays[f"{prefix}.ffn.b1"] = np.zeros(hidden)
        arrays[f"{prefix}.ffn.w2"] = glorot(rng, (hidden, d), hidden, d)
        arrays[f"{prefix}.ffn.b2"] = np.zeros(d)
    arrays["out_ln.g"] = np.ones(d)
    arrays["out_ln.b"] = np.zeros(d)
    return arrays


def init_reward_params(
    cfg: EncoderConfig,
    query_dim: int,
    item_dim: int,
    max_len: int,
    rng: np.random.Generator,
) -> RewardParams:
    """Create a freshly initialized reward model.

    Args:
        cfg: Encoder shape.
        query_dim: Width of the query vector (including any context features).
        item_dim: Width of one item feature row.
        max_len: Rows of the position table P, the longest list the model accepts.
        rng: Seeded generator; the same seed yields identical arrays.

    Returns:
        RewardParams: Glorot-uniform weights; CLS token and P drawn from Normal(0, 0.02).

    """
    _msg = "init_reward_params starting"
    log.debug(_msg)

    if query_dim < 1 or item_dim < 1 or max_len < 1:
        _msg = f"invalid dims query={query_dim} item={item_dim} max_len={max_len}"
        raise ContractViolationError(_msg)
    arrays = _encoder_arrays(rng, cfg, query_dim + item_dim)
    arrays["cls"] = rng.normal(0.0, EMBED_INIT_STD, size=cfg.width)
    arrays["pos"] = rng.normal(0.0, EMBED_INIT_STD, size=(max_len, cfg.width))
    arrays["readout"] = glorot(rng, (cfg.width,), cfg.width, 1)
    params = RewardParams(
        kind="reward",
        encoder=cfg,
        query_dim=query_dim,
        item_dim=item_dim,
        max_len=max_len,
        arrays=arrays,
    )

    _msg = f"init_reward_params returning {params.size()} parameters"
    log.debug(_msg)
    return params


def init_ranker_params(
    cfg: EncoderConfig,
    query_dim: int,
    item_dim: int,
    max_len: int,
    rng: np.random.Generator,
) -> RankerParams:
    """Create a freshly initialized ranker (no position table)."""
    _msg = "init_ranker_params starting"
    log.debug(_msg)

    if query_dim < 1 or item_dim < 1:
        _msg = f"invalid dims query={query_dim} item={item_dim}"
        raise ContractViolationError(_msg)
    arrays = _encoder_arrays(rng, cfg, query_dim + item_dim)
    arrays["readout"] = glorot(rng, (cfg.width,), cfg.width, 1)
    params = RankerParams(
        kind="ranker",
        encoder=cfg,
        query_dim=query_dim,
        item_dim=item_dim,
        max_len=max_len,
        arrays=arrays,
    )

    _msg = f"init_ranker_params returning {params.size()} parameters"
    log.debug(_msg)
    return params
