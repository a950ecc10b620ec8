"""Position-bias click oracle: examination times relevance."""

import logging
from collections.abc import Callable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from permurank.autodiff import ops
from permurank.autodiff.tape import Tensor
from permurank.datagen.models import QueryGroup
from permurank.errors import ContractViolationError, DomainError
from permurank.sorting.softsort import HardPermutation, SoftPermutationMatrix, hard_permutation

log = logging.getLogger(__name__)

DEFAULT_EXAMINATION: tuple[float, ...] = (1.0, 0.6738, 0.4145, 0.2932, 0.2079, 0.1714, 0.1363, 0.1166)

RelevanceFunction = Callable[[QueryGroup], np.ndarray]


def check_examination(values: tuple[float, ...]) -> tuple[float, ...]:
    """Validate a position-probability table: starts at 1, non-increasing, entries in (0, 1]."""
    if not values:
        _msg = "examination table must not be empty"
        raise ValueError(_msg)
    if values[0] != 1.0:
        _msg = f"examination[0] must be 1.0, got {values[0]}"
        raise ValueError(_msg)
    if any(not 0.0 < v <= 1.0 for v in values):
        _msg = "examination entries must lie in (0, 1]"
        raise ValueError(_msg)
    if any(b > a for a, b in zip(values, values[1:], strict=False)):
        _msg = "examination table must be non-increasing"
        raise ValueError(_msg)
    return values


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


class IpsOracle(BaseModel):
    """Click model P(click at position k) = P(E_k) * sigmoid(R)."""

    model_config = ConfigDict(frozen=True)

    examination: tuple[float, ...] = DEFAULT_EXAMINATION
    """Examination probability per rank position, top first."""

    relevance_fn: RelevanceFunction | None = Field(default=None, exclude=True)
    """Relevance logits of a group's items; defaults to the group's latent R."""

    @field_validator("examination")
    @classmethod
    def _check_examination(cls, values: tuple[float, ...]) -> tuple[float, ...]:
        return check_examination(values)

    def relevance(self, group: QueryGroup) -> np.ndarray:
        """Relevance logits R of the group's items."""
        if self.relevance_fn is not None:
            return np.asarray(self.relevance_fn(group), dtype=np.float64)
        return group.rel_logits

    def covers(self, size: int) -> None:
        """Raise ContractViolationError when lists of `size` items have unexamined positions."""
        if size > len(self.examination):
            _msg = f"list of {size} items exceeds the examination table ({len(self.examination)} positions)"
            raise ContractViolationError(_msg)


def click_prob(oracle: IpsOracle, position: int, rel_logit: float) -> float:
    """Probability of a click at a 1-based position for an item with logit R.

    Args:
        oracle: Click model.
        position: Rank position, 1 for the top slot.
        rel_logit: Relevance logit R of the item shown there.

    Returns:
        float: P(E_position) * sigmoid(R).

    """
    if not 1 <= position <= len(oracle.examination):
        _msg = f"position {position} outside 1..{len(oracle.examination)}"
        raise ContractViolationError(_msg)
    return float(oracle.examination[position - 1] * _sigmoid(np.float64(rel_logit)))


def click_probs(oracle: IpsOracle, rel_logits: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """Click probability per rank position for batched orders, shape (..., L)."""
    orders = np.asarray(orders, dtype=np.int64)
    oracle.covers(orders.shape[-1])
    exam = np.asarray(oracle.examination[: orders.shape[-1]])
    shown = np.take_along_axis(np.asarray(rel_logits, dtype=np.float64), orders, axis=-1)
    return exam * _sigmoid(shown)


def u_ips_orders(oracle: IpsOracle, rel_logits: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """Probability of at least one click, 1 - prod_k (1 - P(E_k) sigmoid(R_order[k])), per list."""
    return 1.0 - np.prod(1.0 - click_probs(oracle, rel_logits, orders), axis=-1)


def u_ips(oracle: IpsOracle, group: QueryGroup, pi: HardPermutation) -> float:
    """Utility of showing a group's items in the order pi."""
    if len(pi) != group.size:
        _msg = f"permutation of {len(pi)} items for a group of {group.size}"
        raise ContractViolationError(_msg)
    return float(u_ips_orders(oracle, oracle.relevance(group), np.asarray(pi.order)))


def soft_u_ips(oracle: IpsOracle, pi: SoftPermutationMatrix | Tensor, rel_logits: np.ndarray) -> Tensor:
    """Differentiable U_IPS of a soft permutation.

    Position k receives the relevance mixture (Π sigmoid(R))[k], so a hard Π
    gives u_ips exactly.

    Args:
        oracle: Click model.
        pi: Π of shape (..., L, L).
        rel_logits: Relevance logits (..., L).

    Returns:
        Tensor: Utility per list, shape (...).

    """
    matrix = pi.matrix if isinstance(pi, SoftPermutationMatrix) else pi
    size = matrix.shape[-1]
    oracle.covers(size)
    relevance = _sigmoid(rel_logits)[..., np.newaxis]
    at_position = ops.reshape(ops.matmul(matrix, relevance), matrix.shape[:-1])
    clicks = ops.mul(at_position, np.asarray(oracle.examination[:size]))
    no_click = ops.sum(ops.log(ops.sub(1.0, clicks)), axis=-1)
    return ops.sub(1.0, ops.exp(no_click))


def ideal_permutation(rel_logits: np.ndarray) -> HardPermutation:
    """Sort by descending relevance; with a non-increasing examination table this maximizes U_IPS."""
    return hard_permutation(np.asarray(rel_logits, dtype=np.float64))


def sample_label(p: float, rng: np.random.Generator) -> int:
    """Bernoulli(p) draw from a seeded generator."""
    if not 0.0 <= p <= 1.0:
        _msg = f"probability {p} outside [0, 1]"
        raise DomainError(_msg)
    return int(rng.random() < p)


def sample_clicks(oracle: IpsOracle, rel_logits: np.ndarray, order: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-item 0/1 clicks under the click model, indexed by item (not position)."""
    order = np.asarray(order, dtype=np.int64)
    at_position = (rng.random(order.shape[-1]) < click_probs(oracle, rel_logits, order)).astype(np.int64)
    clicks = np.zeros_like(at_position)
    clicks[order] = at_position
    return clicks
