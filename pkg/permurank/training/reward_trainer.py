"""Stage 1: fit the reward model to logged feedback on factual permutations."""

import logging

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape, Tensor
from permurank.datagen.models import Dataset, GroupBatch, QueryGroup, stack_groups
from permurank.models.params import EncoderConfig, ModelParams, RewardParams, init_reward_params
from permurank.models.reward import hard_position_rows, predict_reward, reward_logit
from permurank.monitoring.metrics import PerformanceMetrics
from permurank.training.loop import fit, require_groups
from permurank.training.models import LossKind, TrainConfig, TrainReport

log = logging.getLogger(__name__)


def reward_loss(logits: Tensor, labels: np.ndarray, kind: LossKind) -> Tensor:
    """Mean loss of reward logits against labels in [0, 1].

    Cross-entropy is written as softplus(z) - y z, which is exact for soft labels
    and stays finite for large |z|.
    """
    if kind == "cross_entropy":
        return ops.mean(ops.sub(ops.softplus(logits), ops.mul(logits, labels)))
    residual = ops.sub(ops.sigmoid(logits), labels)
    return ops.mean(ops.mul(residual, residual))


def reward_loss_value(predictions: np.ndarray, labels: np.ndarray, kind: LossKind) -> float:
    """reward_loss on plain predicted probabilities."""
    p = np.clip(predictions, 1e-12, 1.0 - 1e-12)
    if kind == "cross_entropy":
        return float(np.mean(-(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))))
    return float(np.mean((predictions - labels) ** 2))


def train_reward(
    dataset: Dataset,
    cfg: TrainConfig,
    encoder: EncoderConfig | None = None,
    metrics: PerformanceMetrics | None = None,
) -> tuple[RewardParams, TrainReport]:
    """Fit g to the logged labels using hard position rows of the logged orders.

    Args:
        dataset: Groups with labels; the train split is fitted, val selects the checkpoint.
        cfg: Optimization settings; cfg.loss picks cross-entropy or squared error.
        encoder: Encoder shape (defaults when omitted).
        metrics: Timer sink.

    Returns:
        tuple[RewardParams, TrainReport]: Parameters of the epoch with the lowest validation loss.

    """
    _msg = "train_reward starting"
    log.debug(_msg)

    require_groups(dataset.train, "reward")
    world = dataset.world
    params = init_reward_params(
        encoder or EncoderConfig(),
        world.features_dim,
        world.item_dim,
        world.list_size,
        np.random.default_rng(cfg.seed),
    )
    held_out = dataset.val or dataset.train
    val_batch = stack_groups(held_out)

    def step(current: ModelParams, batch: GroupBatch, _groups: list[QueryGroup], _epoch: int) -> tuple[float, dict[str, np.ndarray]]:
        tape = Tape()
        bound = current.bind(tape)
        logits = reward_logit(bound, batch.q, batch.items, hard_position_rows(bound, batch.orders))
        loss = reward_loss(logits, batch.labels, cfg.loss)
        return loss.item(), tape.backward(loss).collect(bound.tensors)

    def validate(current: ModelParams) -> tuple[float, float]:
        predictions = predict_reward(current, val_batch.q, val_batch.items, val_batch.orders)
        return reward_loss_value(predictions, val_batch.labels, cfg.loss), float(np.mean(predictions))

    best, report = fit("reward", params, dataset.train, cfg, step, validate, metrics)

    _msg = f"train_reward returning best epoch {report.best_epoch}"
    log.debug(_msg)
    return best, report
