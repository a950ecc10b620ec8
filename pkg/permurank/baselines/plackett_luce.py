"""Plackett-Luce log-probabilities and Gumbel-argsort sampling."""

import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from permurank.autodiff import ops
from permurank.autodiff.tape import Tensor
from permurank.errors import ContractViolationError
from permurank.sorting.softsort import HardPermutation, hard_orders

log = logging.getLogger(__name__)

GUMBEL_CLAMP = 1e-12


class PlackettLuceSampler(BaseModel):
    """Sampler over rankings with logits scores / temperature."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    temperature: float = Field(default=0.1, gt=0.0)
    """Gumbel temperature; logits are scores divided by it."""

    samples: int = Field(default=10, ge=1)
    """K, rankings drawn per group and step."""

    greedy: bool = False
    """Replace sampling with the deterministic argsort of the scores."""


@dataclass(frozen=True)
class PermutationPair:
    """Two rankings of one group where the reward model prefers pi_plus."""

    pi_plus: HardPermutation
    pi_minus: HardPermutation
    s_plus: float
    s_minus: float

    def __post_init__(self) -> None:
        if len(self.pi_plus) != len(self.pi_minus):
            _msg = "pair members rank different numbers of items"
            raise ContractViolationError(_msg)
        if not self.s_plus > self.s_minus:
            _msg = f"pi_plus must have the higher reward, got {self.s_plus} <= {self.s_minus}"
            raise ContractViolationError(_msg)


def pl_log_prob(scores: np.ndarray, pi: HardPermutation) -> float:
    """log P(pi) = sum_k [s_pi(k) - log sum_{j>=k} exp(s_pi(j))].

    Args:
        scores: Finite logits, one per item.
        pi: Ranking to score.

    Returns:
        float: Log-probability under the Plackett-Luce model.

    """
    values = np.asarray(scores, dtype=np.float64)
    if values.shape != (len(pi),):
        _msg = f"scores of shape {values.shape} for a ranking of {len(pi)} items"
        raise ContractViolationError(_msg)
    shown = values[list(pi.order)]
    tails = np.logaddexp.accumulate(shown[::-1])[::-1]
    return float(np.sum(shown - tails))


def pl_log_prob_tensor(logits: Tensor, orders: np.ndarray) -> Tensor:
    """Differentiable Plackett-Luce log-probability of orders (..., L) under logits (..., L).

    The tail sums use a detached per-row maximum, so large logits do not overflow.
    """
    orders = np.asarray(orders, dtype=np.int64)
    size = orders.shape[-1]
    shown = ops.take_along(logits, orders)
    peak = np.max(logits.value, axis=-1, keepdims=True)
    # column k sums the items still unplaced at stage k
    tails = ops.matmul(ops.exp(ops.sub(shown, peak)), np.tril(np.ones((size, size))))
    log_tails = ops.add(ops.log(tails), peak)
    return ops.sum(ops.sub(shown, log_tails), axis=-1)


def gumbel_noise(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Standard Gumbel draws by inverse CDF, -log(-log u), with u clamped away from 0 and 1."""
    u = np.clip(rng.random(shape), GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP)
    return -np.log(-np.log(u))


def pl_sample_orders(sampler: PlackettLuceSampler, scores: np.ndarray, rng: np.random.Generator, count: int = 1) -> np.ndarray:
    """Draw `count` rankings; returns orders of shape (count, ..., L)."""
    values = np.asarray(scores, dtype=np.float64)
    if sampler.greedy:
        return np.broadcast_to(hard_orders(values), (count, *values.shape)).copy()
    noise = gumbel_noise((count, *values.shape), rng)
    return hard_orders(values / sampler.temperature + noise)


def pl_sample(sampler: PlackettLuceSampler, scores: np.ndarray, rng: np.random.Generator) -> HardPermutation:
    """One exact Plackett-Luce draw over logits scores / temperature (argsort with Gumbel noise)."""
    order = pl_sample_orders(sampler, scores, rng, count=1)[0]
    return HardPermutation(order=tuple(int(i) for i in order))


def pl_score_function(logits: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """Gradient of log P(order) with respect to the logits, for orders (K, L).

    d/dz_i log P = 1 - sum, over the stages at which item i is still unplaced, of its softmax
    weight among the unplaced items.
    """
    logits = np.asarray(logits, dtype=np.float64)
    orders = np.asarray(orders, dtype=np.int64)
    size = logits.shape[-1]
    shown = logits[orders]
    weights = np.exp(shown - np.max(shown, axis=-1, keepdims=True))
    tails = np.cumsum(weights[:, ::-1], axis=-1)[:, ::-1]
    upper = np.triu(np.ones((size, size)))
    # stage k covers positions j >= k; position j accumulates weight_j / tail_k over k <= j
    per_position = 1.0 - weights * ((1.0 / tails) @ upper)
    grads = np.zeros_like(per_position)
    np.put_along_axis(grads, orders, per_position, axis=-1)
    return grads
