"""Naive baseline: a ranker fitted to per-item targets with a relaxed NDCG loss."""

import logging

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape, Tensor
from permurank.baselines.models import BaselineConfig
from permurank.datagen.models import Dataset, GroupBatch, QueryGroup, stack_groups
from permurank.evaluation.metrics import dcg, discounts, gain_values, ndcg_of_order
from permurank.models.params import EncoderConfig, ModelParams, RankerParams, init_ranker_params
from permurank.models.ranker import ranker_forward, score_items
from permurank.monitoring.metrics import PerformanceMetrics
from permurank.sorting.softsort import hard_orders, softsort
from permurank.training.loop import fit, require_groups
from permurank.training.models import TrainConfig, TrainReport

log = logging.getLogger(__name__)


def relaxed_ndcg_loss(scores: Tensor, gains: np.ndarray, tau: float) -> Tensor:
    """1 - softDCG / idealDCG, averaged over the leading batch axes.

    Args:
        scores: Ranker scores (..., L).
        gains: Non-negative per-item targets (..., L).
        tau: SoftSort temperature.

    Returns:
        Tensor: Scalar loss; lists whose gains are all zero contribute 0.

    Notes:
        1. Π = softsort(scores, tau); Π g is the expected gain at each position.
        2. softDCG discounts those by 1 / log2(k + 1).
        3. idealDCG is the hard DCG of the gains sorted in descending order.

    """
    gains = np.asarray(gains, dtype=np.float64)
    size = gains.shape[-1]
    pi = softsort(scores, tau).matrix
    at_position = ops.reshape(ops.matmul(pi, gains[..., np.newaxis]), gains.shape)
    soft_dcg = ops.sum(ops.mul(at_position, discounts(size)), axis=-1)
    ideal = np.asarray(dcg(-np.sort(-gains, axis=-1)))
    active = ideal > 0.0
    inverse = np.where(active, 1.0 / np.where(active, ideal, 1.0), 0.0)
    return ops.mean(ops.sub(active.astype(np.float64), ops.mul(soft_dcg, inverse)))


def naive_gains(groups: list[QueryGroup], source: str) -> np.ndarray:
    """Per-item targets (B, L): relevance probabilities or logged clicks."""
    if source == "clicks":
        return np.stack([g.clicks.astype(np.float64) for g in groups])
    return np.stack([gain_values(g.rel_logits) for g in groups])


def train_naive(
    dataset: Dataset,
    cfg: TrainConfig,
    baseline: BaselineConfig | None = None,
    encoder: EncoderConfig | None = None,
    metrics: PerformanceMetrics | None = None,
) -> tuple[RankerParams, TrainReport]:
    """Train a ranker directly on per-item targets, ignoring any reward model.

    The report's val_mean_reward holds the hard NDCG of the ranker's validation orders,
    since this trainer has no reward model to query.
    """
    _msg = "train_naive starting"
    log.debug(_msg)

    baseline = baseline or BaselineConfig()
    require_groups(dataset.train, "naive")
    world = dataset.world
    params = init_ranker_params(
        encoder or EncoderConfig(),
        world.features_dim,
        world.item_dim,
        world.list_size,
        np.random.default_rng([cfg.seed, 3]),
    )
    held_out = dataset.val or dataset.train
    val_batch = stack_groups(held_out)
    val_gains = naive_gains(held_out, baseline.naive_gain)

    def step(current: ModelParams, batch: GroupBatch, groups: list[QueryGroup], _epoch: int) -> tuple[float, dict[str, np.ndarray]]:
        tape = Tape()
        bound = current.bind(tape)
        loss = relaxed_ndcg_loss(ranker_forward(bound, batch.q, batch.items), naive_gains(groups, baseline.naive_gain), baseline.naive_tau)
        return loss.item(), tape.backward(loss).collect(bound.tensors)

    def validate(current: ModelParams) -> tuple[float, float]:
        assert isinstance(current, RankerParams)
        scores = score_items(current, val_batch.q, val_batch.items)
        tape = Tape()
        loss = relaxed_ndcg_loss(tape.constant(scores), val_gains, baseline.naive_tau).item()
        hard = np.asarray(ndcg_of_order(val_gains, hard_orders(scores), val_gains.shape[-1]))
        return loss, float(np.mean(hard))

    best, report = fit("naive", params, dataset.train, cfg, step, validate, metrics)

    _msg = f"train_naive returning best epoch {report.best_epoch}"
    log.debug(_msg)
    return best, report
