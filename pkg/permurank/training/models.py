"""Pydantic models for training configuration and per-epoch reports."""

import csv
import logging
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

log = logging.getLogger(__name__)

LossKind = Literal["cross_entropy", "squared_error"]


class TrainConfig(BaseModel):
    """Optimization settings shared by the reward model and every ranker trainer."""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(default=1e-3, ge=0.0)
    """AdamW step size."""

    weight_decay: float = Field(default=1e-2, ge=0.0)
    """Decoupled weight decay."""

    epochs: int = Field(default=20, ge=1)
    """Passes over the training split."""

    batch_size: int = Field(default=32, ge=1)
    """Query groups per step."""

    lam: float = Field(default=1.0, ge=0.0)
    """λ of the misspecification weight w = clip(1 - λ|y - g|, 0, 1)."""

    tau: float = Field(default=1.0, gt=0.0)
    """SoftSort temperature."""

    seed: int = 0
    """Seed for initialization and shuffling."""

    use_ste: bool = False
    """Train through straight-through hard permutations instead of SoftSort."""

    loss: LossKind = "squared_error"
    """Reward-model loss against the logged labels."""

    lr_decay_epoch: int = Field(default=12, ge=1)
    """Epoch (0-based) from which the learning rate is halved."""


class EpochRecord(BaseModel):
    """Metrics of one epoch."""

    epoch: int
    train_loss: float
    val_loss: float
    val_mean_reward: float
    """Mean predicted reward on held-out groups (logged orders for Stage 1, the ranker's orders afterwards)."""

    duration: float = 0.0
    """Wall-clock seconds; kept out of rows() so reports of equal runs compare equal."""


class TrainReport(BaseModel):
    """Epoch history of one training job."""

    trainer: str
    epochs: list[EpochRecord] = []
    best_epoch: int = -1
    """Epoch whose parameters were kept."""

    checkpoint_path: str | None = None

    def rows(self) -> list[tuple[int, str, str, float]]:
        """Long-format rows (epoch, split, metric, value)."""
        result: list[tuple[int, str, str, float]] = []
        for record in self.epochs:
            result.append((record.epoch, "train", "loss", record.train_loss))
            result.append((record.epoch, "val", "loss", record.val_loss))
            result.append((record.epoch, "val", "mean_reward", record.val_mean_reward))
        return result

    def to_csv(self, path: Path | str) -> Path:
        """Write rows() as CSV with an (epoch, split, metric, value) header."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "split", "metric", "value"])
            for epoch, split, metric, value in self.rows():
                writer.writerow([epoch, split, metric, repr(float(value))])
        return target
