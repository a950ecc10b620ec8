"""Stage 2: train the ranker through SoftSort against the frozen reward model."""

import logging
from dataclasses import dataclass

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape, Tensor
from permurank.datagen.models import Dataset, GroupBatch, QueryGroup, stack_groups
from permurank.models.params import BoundParams, EncoderConfig, ModelParams, RankerParams, RewardParams, init_ranker_params
from permurank.models.ranker import ranker_forward, score_items
from permurank.models.reward import predict_reward, reward_forward, soft_position_rows
from permurank.monitoring.metrics import PerformanceMetrics
from permurank.sorting.softsort import hard_orders, softsort, ste_combine
from permurank.training.loop import fit, require_groups
from permurank.training.models import TrainConfig, TrainReport

log = logging.getLogger(__name__)


def misspec_weight(y: np.ndarray | float, g_factual: np.ndarray | float, lam: float) -> np.ndarray:
    """w = clip(1 - λ|y - g_factual|, 0, 1); a plain array, so no gradient flows through it."""
    residual = np.abs(np.asarray(y, dtype=np.float64) - np.asarray(g_factual, dtype=np.float64))
    return np.clip(1.0 - lam * residual, 0.0, 1.0)


@dataclass(frozen=True)
class Stage2Terms:
    """Pieces of one Stage-2 objective evaluation."""

    objective: Tensor
    """Batch mean of w * g(π̂)."""

    rewards: Tensor
    """g(π̂) per group."""

    weights: np.ndarray
    """w per group."""


def stage2_objective(
    ranker: BoundParams,
    reward: BoundParams,
    batch: GroupBatch,
    g_factual: np.ndarray,
    cfg: TrainConfig,
) -> Stage2Terms:
    """Weighted utility of the ranker's relaxed permutations under the frozen reward model.

    Args:
        ranker: Ranker parameters on the tape.
        reward: Reward parameters on the same tape (normally bound as constants).
        batch: Stacked groups.
        g_factual: Reward model prediction on each group's logged order.
        cfg: Supplies tau, lam and use_ste.

    Returns:
        Stage2Terms: Objective, per-group rewards and weights.

    Notes:
        1. Score items with the ranker and relax the sort with SoftSort (or STE).
        2. Mix position rows with Πᵀ P and evaluate g with them.
        3. Weight each group by w from its logged label and g_factual.

    """
    scores = ranker_forward(ranker, batch.q, batch.items)
    pi = ste_combine(scores, cfg.tau) if cfg.use_ste else softsort(scores, cfg.tau)
    rewards = reward_forward(reward, batch.q, batch.items, soft_position_rows(reward, pi))
    weights = misspec_weight(batch.labels, g_factual, cfg.lam)
    return Stage2Terms(objective=ops.mean(ops.mul(rewards, weights)), rewards=rewards, weights=weights)


def ranked_orders(ranker: RankerParams, batch: GroupBatch) -> np.ndarray:
    """Hard orders the ranker induces on a batch."""
    return hard_orders(score_items(ranker, batch.q, batch.items))


def mean_reward_of_ranker(ranker: RankerParams, reward: RewardParams, batch: GroupBatch) -> float:
    """Mean g of the ranker's hard orders."""
    return float(np.mean(predict_reward(reward, batch.q, batch.items, ranked_orders(ranker, batch))))


def train_ranker(
    dataset: Dataset,
    frozen_reward: RewardParams,
    cfg: TrainConfig,
    encoder: EncoderConfig | None = None,
    init: RankerParams | None = None,
    metrics: PerformanceMetrics | None = None,
) -> tuple[RankerParams, TrainReport]:
    """Maximize the weighted Stage-2 objective; the reward parameters are never updated.

    Args:
        dataset: Groups with labels.
        frozen_reward: Trained reward model.
        cfg: Optimization settings (tau, lam, use_ste included).
        encoder: Ranker encoder shape (defaults when omitted).
        init: Starting ranker, e.g. a trained Naive baseline; fresh weights when omitted.
        metrics: Timer sink.

    Returns:
        tuple[RankerParams, TrainReport]: Parameters with the best validation objective.

    """
    _msg = f"train_ranker starting with lam={cfg.lam} tau={cfg.tau} use_ste={cfg.use_ste}"
    log.debug(_msg)

    require_groups(dataset.train, "rewardrank")
    world = dataset.world
    if init is not None:
        params = init.copy()
    else:
        params = init_ranker_params(
            encoder or EncoderConfig(),
            world.features_dim,
            world.item_dim,
            world.list_size,
            np.random.default_rng([cfg.seed, 2]),
        )
    held_out = dataset.val or dataset.train
    val_batch = stack_groups(held_out)
    val_factual = predict_reward(frozen_reward, val_batch.q, val_batch.items, val_batch.orders)

    def step(current: ModelParams, batch: GroupBatch, _groups: list[QueryGroup], _epoch: int) -> tuple[float, dict[str, np.ndarray]]:
        g_factual = predict_reward(frozen_reward, batch.q, batch.items, batch.orders)
        tape = Tape()
        ranker = current.bind(tape)
        reward = frozen_reward.bind(tape, trainable=False)
        terms = stage2_objective(ranker, reward, batch, g_factual, cfg)
        loss = ops.neg(terms.objective)
        return loss.item(), tape.backward(loss).collect(ranker.tensors)

    def validate(current: ModelParams) -> tuple[float, float]:
        tape = Tape()
        terms = stage2_objective(
            current.bind(tape, trainable=False),
            frozen_reward.bind(tape, trainable=False),
            val_batch,
            val_factual,
            cfg,
        )
        assert isinstance(current, RankerParams)
        return -terms.objective.item(), mean_reward_of_ranker(current, frozen_reward, val_batch)

    best, report = fit("rewardrank", params, dataset.train, cfg, step, validate, metrics)

    _msg = f"train_ranker returning best epoch {report.best_epoch}"
    log.debug(_msg)
    return best, report
