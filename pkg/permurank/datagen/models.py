"""Pydantic models for synthetic worlds, query groups and datasets."""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from permurank.errors import ContractViolationError

log = logging.getLogger(__name__)

MAX_LIST_SIZE = 10
SPLITS = ("train", "val", "test")

LabelMode = Literal["binary_click", "soft_ips", "behavioral"]


class SyntheticWorldConfig(BaseModel):
    """Parameters of the synthetic query-item world and its logging policy."""

    model_config = ConfigDict(extra="forbid")

    query_dim: int = 8
    """Width of the query vector q."""

    item_dim: int = 8
    """Width of one item feature row."""

    context_dim: int = 0
    """Width of the optional context vector appended to q (0 disables it)."""

    list_size: int = 8
    """Items per group, L."""

    n_brands: int = 4
    """Size of the brand vocabulary."""

    n_colors: int = 4
    """Size of the color vocabulary."""

    relevance_scale: float = 2.0
    """Multiplier on the bilinear form qᵀ W i."""

    relevance_offset: float = -3.0
    """Constant added to every relevance logit."""

    relevance_noise: float = 0.1
    """Standard deviation of the per-item noise on R."""

    logging_noise: float = 1.0
    """Standard deviation σ_log of the noise the logging policy adds before sorting."""

    label_mode: LabelMode = "soft_ips"
    """How the group label is produced from the logged permutation."""

    perms_per_group: int = Field(default=1, ge=1)
    """Logged permutations per query (5 mirrors a multi-permutation log)."""

    seed: int = 0
    """Seed of the world; the same seed reproduces the same dataset."""

    @model_validator(mode="after")
    def _check_dims(self) -> "SyntheticWorldConfig":
        if self.query_dim < 1 or self.item_dim < 1 or self.context_dim < 0:
            _msg = f"dims must be positive, got query={self.query_dim} item={self.item_dim} context={self.context_dim}"
            raise ValueError(_msg)
        if not 1 <= self.list_size <= MAX_LIST_SIZE:
            _msg = f"list_size must be in [1, {MAX_LIST_SIZE}], got {self.list_size}"
            raise ValueError(_msg)
        if self.n_brands < 1 or self.n_colors < 1:
            _msg = "n_brands and n_colors must be at least 1"
            raise ValueError(_msg)
        if self.relevance_noise < 0 or self.logging_noise < 0:
            _msg = "noise scales must be non-negative"
            raise ValueError(_msg)
        return self

    @property
    def features_dim(self) -> int:
        """Width of q as seen by the models (query plus context)."""
        return self.query_dim + self.context_dim


class QueryGroup(BaseModel):
    """One logged impression: a query, its L items and the order they were shown in."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    group_id: int
    """Unique id of the impression."""

    query_id: int
    """Id of the query; impressions of the same query share it."""

    q: np.ndarray
    """Query vector, shape (query_dim,)."""

    context: np.ndarray
    """Context features appended to q, shape (context_dim,), possibly empty."""

    items: np.ndarray
    """Item feature rows, shape (L, item_dim)."""

    brands: np.ndarray
    """Brand id per item."""

    colors: np.ndarray
    """Color id per item."""

    rel_logits: np.ndarray
    """Latent relevance logit R per item."""

    logged_order: np.ndarray
    """Logged permutation; logged_order[k] is the item shown at position k."""

    label: float
    """Observed feedback: 0/1 for clicks or purchases, a probability for soft labels."""

    purchase_prob: float
    """Behavioral P(purchase) of the logged order."""

    clicks: np.ndarray
    """Per-item 0/1 click under the logged order."""

    @model_validator(mode="after")
    def _check_group(self) -> "QueryGroup":
        size = self.items.shape[0]
        if sorted(self.logged_order.tolist()) != list(range(size)):
            _msg = f"group {self.group_id}: logged order is not a permutation of {size} items"
            raise ValueError(_msg)
        for name in ("brands", "colors", "rel_logits", "clicks"):
            if getattr(self, name).shape != (size,):
                _msg = f"group {self.group_id}: {name} must have {size} entries"
                raise ValueError(_msg)
        if not np.all(np.isfinite(self.rel_logits)):
            _msg = f"group {self.group_id}: relevance logits must be finite"
            raise ValueError(_msg)
        if not 0.0 <= self.label <= 1.0 or not 0.0 <= self.purchase_prob <= 1.0:
            _msg = f"group {self.group_id}: label and purchase_prob must lie in [0, 1]"
            raise ValueError(_msg)
        return self

    @property
    def size(self) -> int:
        """Number of items L."""
        return int(self.items.shape[0])

    @property
    def features(self) -> np.ndarray:
        """q concatenated with the context vector."""
        return np.concatenate([self.q, self.context])

    @property
    def relevance(self) -> np.ndarray:
        """sigmoid(R), the per-item relevance probability."""
        return 1.0 / (1.0 + np.exp(-self.rel_logits))

    def same_as(self, other: "QueryGroup") -> bool:
        """Exact equality of every field, arrays compared bit for bit."""
        for name in type(self).model_fields:
            mine, theirs = getattr(self, name), getattr(other, name)
            if isinstance(mine, np.ndarray):
                if mine.shape != theirs.shape or mine.tobytes() != np.asarray(theirs, dtype=mine.dtype).tobytes():
                    return False
            elif mine != theirs:
                return False
        return True


class Dataset(BaseModel):
    """Train, validation and test query groups of one synthetic world."""

    world: SyntheticWorldConfig
    train: list[QueryGroup] = []
    val: list[QueryGroup] = []
    test: list[QueryGroup] = []

    def split(self, name: str) -> list[QueryGroup]:
        """Groups of one split by name."""
        if name not in SPLITS:
            _msg = f"unknown split {name!r}, expected one of {SPLITS}"
            raise ContractViolationError(_msg)
        return getattr(self, name)

    def all_groups(self) -> list[QueryGroup]:
        """Every group, train first."""
        return [*self.train, *self.val, *self.test]


@dataclass(frozen=True)
class GroupBatch:
    """Equal-length groups stacked along a leading batch axis."""

    q: np.ndarray
    items: np.ndarray
    orders: np.ndarray
    labels: np.ndarray
    rel_logits: np.ndarray

    def __len__(self) -> int:
        return int(self.q.shape[0])


def stack_groups(groups: list[QueryGroup]) -> GroupBatch:
    """Stack groups of the same list size into batched arrays.

    Args:
        groups: Non-empty list of groups with equal L.

    Returns:
        GroupBatch: q (B, Dq), items (B, L, Di), logged orders (B, L), labels (B,), R (B, L).

    """
    if not groups:
        _msg = "stack_groups needs at least one group"
        raise ContractViolationError(_msg)
    sizes = {g.size for g in groups}
    if len(sizes) != 1:
        _msg = f"stack_groups needs equal list sizes, got {sorted(sizes)}"
        raise ContractViolationError(_msg)
    return GroupBatch(
        q=np.stack([g.features for g in groups]),
        items=np.stack([g.items for g in groups]),
        orders=np.stack([g.logged_order for g in groups]).astype(np.int64),
        labels=np.array([g.label for g in groups], dtype=np.float64),
        rel_logits=np.stack([g.rel_logits for g in groups]),
    )
