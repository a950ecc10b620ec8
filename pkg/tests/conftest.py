"""Shared fixtures: a small synthetic world, a fast training setup and a seeded generator."""

import numpy as np
import pytest

from permurank.datagen.generator import generate
from permurank.datagen.models import Dataset, SyntheticWorldConfig
from permurank.models.params import EncoderConfig
from permurank.training.models import TrainConfig


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_world() -> SyntheticWorldConfig:
    return SyntheticWorldConfig(query_dim=3, item_dim=3, list_size=4, seed=11)


@pytest.fixture
def small_dataset(small_world: SyntheticWorldConfig) -> Dataset:
    return generate(small_world, 40)


@pytest.fixture
def tiny_encoder() -> EncoderConfig:
    return EncoderConfig(depth=1, width=8, heads=2, ffn_multiplier=2)


@pytest.fixture
def fast_train() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=8, seed=5, lr_decay_epoch=1)
