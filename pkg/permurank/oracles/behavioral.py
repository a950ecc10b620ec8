"""Rule-based shopper that scores a whole list for purchase likelihood."""

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from permurank.datagen.models import QueryGroup
from permurank.errors import ContractViolationError
from permurank.oracles.ips import DEFAULT_EXAMINATION, check_examination
from permurank.sorting.softsort import HardPermutation

log = logging.getLogger(__name__)


class BehavioralUserConfig(BaseModel):
    """Biases of the simulated shopper."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    position_scores: tuple[float, ...] = DEFAULT_EXAMINATION
    """Attention paid to each rank position, top first."""

    brand_penalty: float = Field(default=0.3, ge=0.0, lt=1.0)
    """β: loss in purchase likelihood when every adjacent pair shares a brand."""

    color_penalty: float = Field(default=0.2, ge=0.0, lt=1.0)
    """γ: loss when every adjacent pair shares a color."""

    irrelevance_penalty: float = Field(default=0.4, ge=0.0, lt=1.0)
    """δ: loss when the top of the list is entirely irrelevant."""

    top_window: int = Field(default=3, ge=1)
    """Number of top positions whose relevance is inspected."""

    @field_validator("position_scores")
    @classmethod
    def _check_scores(cls, values: tuple[float, ...]) -> tuple[float, ...]:
        return check_examination(values)

    def covers(self, size: int) -> None:
        """Raise ContractViolationError when lists of `size` items have positions without a score."""
        if size > len(self.position_scores):
            _msg = f"list of {size} items exceeds the position scores ({len(self.position_scores)} positions)"
            raise ContractViolationError(_msg)


class PurchaseBreakdown(BaseModel):
    """Factors that make up one purchase probability."""

    base: float
    """1 - prod_k (1 - position_scores[k] * rel_order[k])."""

    brand: float
    """1 - β * (adjacent same-brand pairs) / (L - 1)."""

    color: float
    """1 - γ * (adjacent same-color pairs) / (L - 1)."""

    irrelevance: float
    """1 - δ * max(0, 1 - mean relevance of the top window)."""

    unclamped: float
    """Product of the four factors."""

    probability: float
    """The product clamped to [0, 1]."""


def _adjacent_fraction(labels: np.ndarray) -> float:
    if labels.size < 2:
        return 0.0
    return float(np.count_nonzero(labels[1:] == labels[:-1]) / (labels.size - 1))


def purchase_breakdown(
    cfg: BehavioralUserConfig,
    relevance: np.ndarray,
    brands: np.ndarray,
    colors: np.ndarray,
    order: np.ndarray,
) -> PurchaseBreakdown:
    """Score one ordered list from per-item arrays.

    Args:
        cfg: Shopper biases.
        relevance: Per-item relevance in [0, 1].
        brands: Per-item brand ids.
        colors: Per-item color ids.
        order: order[k] is the item shown at position k.

    Returns:
        PurchaseBreakdown: Every factor and the clamped product.

    Notes:
        1. Reorder relevance, brands and colors into display order.
        2. Base likelihood: probability that at least one position converts.
        3. Brand and color factors penalize the fraction of adjacent equal pairs (1 when L < 2).
        4. Irrelevance factor penalizes a low mean relevance in the top window.

    """
    order = np.asarray(order, dtype=np.int64)
    size = order.size
    cfg.covers(size)
    rel = np.asarray(relevance, dtype=np.float64)[order]
    scores = np.asarray(cfg.position_scores[:size])

    base = float(1.0 - np.prod(1.0 - scores * rel))
    brand = 1.0 - cfg.brand_penalty * _adjacent_fraction(np.asarray(brands)[order])
    color = 1.0 - cfg.color_penalty * _adjacent_fraction(np.asarray(colors)[order])
    window = rel[: cfg.top_window]
    irrelevance = 1.0 - cfg.irrelevance_penalty * max(0.0, 1.0 - float(np.mean(window)))
    unclamped = base * brand * color * irrelevance
    return PurchaseBreakdown(
        base=base,
        brand=brand,
        color=color,
        irrelevance=irrelevance,
        unclamped=unclamped,
        probability=min(1.0, max(0.0, unclamped)),
    )


def behavioral_purchase_prob(
    cfg: BehavioralUserConfig,
    group: QueryGroup,
    pi: HardPermutation,
) -> tuple[float, PurchaseBreakdown]:
    """Purchase probability of a group shown in order pi, with its factor breakdown."""
    if len(pi) != group.size:
        _msg = f"permutation of {len(pi)} items for a group of {group.size}"
        raise ContractViolationError(_msg)
    breakdown = purchase_breakdown(cfg, group.relevance, group.brands, group.colors, np.asarray(pi.order))
    return breakdown.probability, breakdown


def choose_item(cfg: BehavioralUserConfig, group: QueryGroup, pi: HardPermutation) -> int:
    """Item the shopper would pick: argmax of position score times relevance, ties to the higher slot."""
    return chosen_item(cfg, group.relevance, np.asarray(pi.order))


def chosen_item(cfg: BehavioralUserConfig, relevance: np.ndarray, order: np.ndarray) -> int:
    """choose_item on plain arrays."""
    order = np.asarray(order, dtype=np.int64)
    if order.size < 1:
        _msg = "choose_item needs at least one item"
        raise ContractViolationError(_msg)
    cfg.covers(order.size)
    appeal = np.asarray(cfg.position_scores[: order.size]) * np.asarray(relevance, dtype=np.float64)[order]
    return int(order[int(np.argmax(appeal))])
