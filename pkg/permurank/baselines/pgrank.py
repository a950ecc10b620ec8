"""PG-Rank*: Plackett-Luce REINFORCE against the learned reward, with a leave-one-out baseline."""

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape
from permurank.baselines.models import BaselineConfig
from permurank.baselines.plackett_luce import PlackettLuceSampler, pl_sample_orders, pl_score_function
from permurank.datagen.models import Dataset, GroupBatch, QueryGroup, stack_groups
from permurank.models.params import EncoderConfig, ModelParams, RankerParams, RewardParams, init_ranker_params
from permurank.models.ranker import ranker_forward
from permurank.models.reward import predict_reward
from permurank.monitoring.metrics import PerformanceMetrics
from permurank.training.loop import fit, require_groups
from permurank.training.models import TrainConfig, TrainReport
from permurank.training.ranker_trainer import mean_reward_of_ranker

log = logging.getLogger(__name__)

RewardFunction = Callable[[np.ndarray], np.ndarray]
"""Maps sampled orders (K, L) to their rewards (K,)."""


@dataclass(frozen=True)
class ReinforceEstimate:
    """One REINFORCE estimate for a single group."""

    gradient: np.ndarray
    """Estimated gradient of the expected reward with respect to the scores."""

    orders: np.ndarray
    rewards: np.ndarray


def leave_one_out_advantages(rewards: np.ndarray) -> np.ndarray:
    """r_k - mean of the other K-1 rewards along the last axis; r_k itself when K = 1."""
    rewards = np.asarray(rewards, dtype=np.float64)
    count = rewards.shape[-1]
    if count < 2:
        return rewards.copy()
    baseline = (np.sum(rewards, axis=-1, keepdims=True) - rewards) / (count - 1)
    return rewards - baseline


def score_gradient(scores: np.ndarray, orders: np.ndarray, rewards: np.ndarray, temperature: float) -> np.ndarray:
    """(1/K) sum_k A_k d/ds log P(order_k) for logits scores / temperature."""
    advantages = leave_one_out_advantages(rewards)
    grads = pl_score_function(np.asarray(scores) / temperature, orders) / temperature
    return np.mean(advantages[:, np.newaxis] * grads, axis=0)


def reinforce_score_gradient(
    scores: np.ndarray,
    reward_fn: RewardFunction,
    sampler: PlackettLuceSampler,
    rng: np.random.Generator,
) -> ReinforceEstimate:
    """Sample K rankings and estimate the policy gradient at the score level.

    Args:
        scores: Ranker scores of one group (L,).
        reward_fn: Rewards of sampled orders.
        sampler: Temperature, K and greedy switch.
        rng: Seeded generator of this group.

    Returns:
        ReinforceEstimate: Score gradient plus the samples and rewards it used.

    """
    orders = pl_sample_orders(sampler, scores, rng, count=sampler.samples)
    rewards = np.asarray(reward_fn(orders), dtype=np.float64)
    return ReinforceEstimate(gradient=score_gradient(scores, orders, rewards, sampler.temperature), orders=orders, rewards=rewards)


def _batched_reward(frozen_reward: RewardParams, batch: GroupBatch, orders: np.ndarray) -> np.ndarray:
    count = orders.shape[1]
    q = np.repeat(batch.q[:, np.newaxis], count, axis=1)
    items = np.repeat(batch.items[:, np.newaxis], count, axis=1)
    return predict_reward(frozen_reward, q, items, orders)


def _surrogate_gradients(
    current: ModelParams,
    frozen_reward: RewardParams,
    batch: GroupBatch,
    rngs: list[np.random.Generator],
    sampler: PlackettLuceSampler,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean sampled reward and the estimated gradient of the expected reward."""
    tape = Tape()
    bound = current.bind(tape)
    scores = ranker_forward(bound, batch.q, batch.items)
    orders = np.stack([pl_sample_orders(sampler, s, rng, count=sampler.samples) for s, rng in zip(scores.value, rngs, strict=True)])
    rewards = _batched_reward(frozen_reward, batch, orders)
    direction = np.stack([score_gradient(s, o, r, sampler.temperature) for s, o, r in zip(scores.value, orders, rewards, strict=True)])
    # d/dθ of sum(scores * direction) is the chain rule applied to the score-level estimate
    surrogate = ops.scale(ops.sum(ops.mul(scores, direction)), 1.0 / len(batch))
    return float(np.mean(rewards)), tape.backward(surrogate).collect(bound.tensors)


def pg_rank_step(
    ranker: RankerParams,
    frozen_reward: RewardParams,
    group: QueryGroup,
    sampler: PlackettLuceSampler,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """One REINFORCE estimate of the gradient of E[g] with respect to the ranker parameters.

    The reward model scores each sampled ranking with its hard position rows.
    """
    _, grads = _surrogate_gradients(ranker, frozen_reward, stack_groups([group]), [rng], sampler)
    return grads


def train_pgrank(
    dataset: Dataset,
    frozen_reward: RewardParams,
    cfg: TrainConfig,
    baseline: BaselineConfig | None = None,
    encoder: EncoderConfig | None = None,
    init: RankerParams | None = None,
    metrics: PerformanceMetrics | None = None,
) -> tuple[RankerParams, TrainReport]:
    """Ascend the sampled policy gradient; groups draw from generators keyed by seed, epoch and group id."""
    _msg = "train_pgrank starting"
    log.debug(_msg)

    baseline = baseline or BaselineConfig()
    sampler = baseline.sampler()
    require_groups(dataset.train, "pgrank")
    world = dataset.world
    params = init.copy() if init is not None else init_ranker_params(
        encoder or EncoderConfig(),
        world.features_dim,
        world.item_dim,
        world.list_size,
        np.random.default_rng([cfg.seed, 4]),
    )
    val_batch = stack_groups(dataset.val or dataset.train)

    def step(current: ModelParams, batch: GroupBatch, groups: list[QueryGroup], epoch: int) -> tuple[float, dict[str, np.ndarray]]:
        rngs = [np.random.default_rng([cfg.seed, epoch, g.group_id]) for g in groups]
        mean_reward, grads = _surrogate_gradients(current, frozen_reward, batch, rngs, sampler)
        return -mean_reward, {name: -grad for name, grad in grads.items()}

    def validate(current: ModelParams) -> tuple[float, float]:
        assert isinstance(current, RankerParams)
        value = mean_reward_of_ranker(current, frozen_reward, val_batch)
        return -value, value

    best, report = fit("pgrank", params, dataset.train, cfg, step, validate, metrics)

    _msg = f"train_pgrank returning best epoch {report.best_epoch}"
    log.debug(_msg)
    return best, report
