"""Epoch loop shared by every trainer: shuffling, AdamW steps, NaN guard and model selection."""

import logging
from collections.abc import Callable
from typing import TypeVar

import numpy as np

from permurank.datagen.models import GroupBatch, QueryGroup, stack_groups
from permurank.errors import ContractViolationError, TrainingFailureError
from permurank.models.params import ModelParams
from permurank.monitoring.metrics import PerformanceMetrics, global_metrics
from permurank.training.models import EpochRecord, TrainConfig, TrainReport
from permurank.training.optimizer import AdamW

log = logging.getLogger(__name__)

ParamsT = TypeVar("ParamsT", bound=ModelParams)

StepFunction = Callable[[ModelParams, GroupBatch, list[QueryGroup], int], tuple[float, dict[str, np.ndarray]]]
"""(params, batch, groups, epoch) -> (loss, gradient of the loss per parameter)."""

ValidateFunction = Callable[[ModelParams], tuple[float, float]]
"""params -> (validation loss, mean predicted reward on held-out groups)."""


def minibatches(n_items: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches covering range(n_items) once."""
    order = rng.permutation(n_items)
    return [order[start : start + batch_size] for start in range(0, n_items, batch_size)]


def learning_rate_for(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: the configured rate, halved from lr_decay_epoch on."""
    if epoch >= cfg.lr_decay_epoch:
        return cfg.learning_rate * 0.5
    return cfg.learning_rate


def check_finite(value: float, epoch: int, trainer: str) -> None:
    """Raise TrainingFailureError for a NaN or infinite loss."""
    if not np.isfinite(value):
        _msg = f"{trainer}: loss became {value} in epoch {epoch}"
        raise TrainingFailureError(_msg, epoch=epoch)


def require_groups(groups: list[QueryGroup], trainer: str) -> None:
    """Raise ContractViolationError for an empty training split."""
    if not groups:
        _msg = f"{trainer}: the training split is empty"
        raise ContractViolationError(_msg)


def fit(
    trainer: str,
    params: ParamsT,
    groups: list[QueryGroup],
    cfg: TrainConfig,
    step: StepFunction,
    validate: ValidateFunction,
    metrics: PerformanceMetrics | None = None,
) -> tuple[ParamsT, TrainReport]:
    """Run the epoch loop and keep the parameters with the lowest validation loss.

    Args:
        trainer: Name used in logs and in the report.
        params: Initial parameters; updated in place during training.
        groups: Training groups.
        cfg: Optimization settings.
        step: Computes the loss and its gradient on one minibatch.
        validate: Scores the current parameters on held-out groups.
        metrics: Timer sink (the process-wide collector by default).

    Returns:
        tuple[ParamsT, TrainReport]: Copy of the best parameters and the epoch history.

    Notes:
        1. Shuffle with a generator seeded from cfg.seed, so equal configs give equal runs.
        2. Every minibatch loss is checked; NaN or Inf raises TrainingFailureError with the epoch.
        3. After each epoch the parameters are validated and copied when they improve.

    """
    _msg = f"fit starting for {trainer}: {len(groups)} groups, {cfg.epochs} epochs"
    log.debug(_msg)

    require_groups(groups, trainer)
    metrics = metrics or global_metrics
    rng = np.random.default_rng([cfg.seed, 1])
    optimizer = AdamW(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)
    report = TrainReport(trainer=trainer)
    best = params.copy()
    best_loss = np.inf

    for epoch in range(cfg.epochs):
        timer = f"{trainer}.epoch"
        metrics.start_timer(timer)
        optimizer.learning_rate = learning_rate_for(cfg, epoch)
        losses = []
        for indices in minibatches(len(groups), cfg.batch_size, rng):
            chunk = [groups[i] for i in indices]
            loss, grads = step(params, stack_groups(chunk), chunk, epoch)
            check_finite(loss, epoch, trainer)
            optimizer.step(params, grads)
            losses.append(loss * len(chunk))
        train_loss = float(np.sum(losses) / len(groups))
        val_loss, val_reward = validate(params)
        check_finite(val_loss, epoch, trainer)
        duration = metrics.stop_timer(timer)
        metrics.record_epoch(trainer, duration)

        report.epochs.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=val_loss,
                val_mean_reward=val_reward,
                duration=duration,
            )
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best = params.copy()
            report.best_epoch = epoch

        _msg = (
            f"{trainer} epoch {epoch}: train_loss={train_loss:.6f} val_loss={val_loss:.6f} "
            f"val_mean_reward={val_reward:.6f} ({duration:.2f}s)"
        )
        log.info(_msg)

    _msg = f"fit returning for {trainer}, best epoch {report.best_epoch}"
    log.debug(_msg)
    return best, report
