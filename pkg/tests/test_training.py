import csv

import numpy as np
import pytest

from permurank.datagen.generator import generate
from permurank.datagen.models import Dataset, SyntheticWorldConfig, stack_groups
from permurank.errors import ContractViolationError, TrainingFailureError
from permurank.models.params import EncoderConfig, ModelParams, init_reward_params
from permurank.models.reward import predict_reward
from permurank.monitoring.metrics import PerformanceMetrics
from permurank.training.loop import fit, learning_rate_for, minibatches
from permurank.training.models import TrainConfig
from permurank.training.optimizer import AdamW
from permurank.training.ranker_trainer import mean_reward_of_ranker, misspec_weight, train_ranker
from permurank.training.reward_trainer import reward_loss_value, train_reward


def _params(**arrays: np.ndarray) -> ModelParams:
    return ModelParams(kind="test", encoder=EncoderConfig(), query_dim=1, item_dim=1, max_len=1, arrays=dict(arrays))


def _with_labels(dataset: Dataset, label: float) -> Dataset:
    def relabel(groups):
        return [g.model_copy(update={"label": label}) for g in groups]

    return dataset.model_copy(update={"train": relabel(dataset.train), "val": relabel(dataset.val)})


class TestMisspecWeight:
    """Test the misspecification weight."""

    def test_examples(self):
        """Test w for a few hand-computed residuals."""
        assert float(misspec_weight(1.0, 0.8, 0.5)) == pytest.approx(0.9)
        assert float(misspec_weight(1.0, 0.8, 0.0)) == 1.0
        assert float(misspec_weight(0.0, 1.0, 2.0)) == 0.0

    @pytest.mark.parametrize("lam", [0.0, 0.1, 0.5, 1.0, 2.0])
    def test_weighted_objective_is_bounded(self, rng, lam):
        """Test sum(w * g) never exceeds sum(g) and w stays in [0, 1]."""
        y = rng.uniform(size=200)
        g = rng.uniform(size=200)
        w = misspec_weight(y, g, lam)
        assert np.all((w >= 0.0) & (w <= 1.0))
        assert np.sum(w * g) <= np.sum(g)


class TestAdamW:
    """Test the optimizer."""

    def test_first_step_moves_by_learning_rate(self):
        """Test the bias-corrected first step has size lr per coordinate."""
        params = _params(x=np.array([1.0, -2.0]))
        AdamW(learning_rate=0.1, weight_decay=0.0).step(params, {"x": np.array([3.0, -0.5])})
        np.testing.assert_allclose(params.arrays["x"], [0.9, -1.9], atol=1e-7)

    def test_weight_decay_without_gradient(self):
        """Test a zero gradient only applies the decoupled decay."""
        params = _params(x=np.array([2.0]))
        AdamW(learning_rate=0.1, weight_decay=0.5).step(params, {"x": np.array([0.0])})
        np.testing.assert_allclose(params.arrays["x"], [1.9])

    def test_missing_gradients_are_skipped(self):
        """Test arrays without a gradient are left untouched."""
        params = _params(x=np.array([1.0]), y=np.array([1.0]))
        AdamW(learning_rate=0.1).step(params, {"x": np.array([1.0])})
        assert params.arrays["y"][0] == 1.0


def test_learning_rate_schedule():
    cfg = TrainConfig(learning_rate=0.2, lr_decay_epoch=3)
    assert [learning_rate_for(cfg, e) for e in range(5)] == [0.2, 0.2, 0.2, 0.1, 0.1]


def test_minibatches_cover_every_index():
    batches = minibatches(23, 5, np.random.default_rng(0))
    assert [len(b) for b in batches] == [5, 5, 5, 5, 3]
    assert sorted(np.concatenate(batches).tolist()) == list(range(23))


class TestFit:
    """Test the shared epoch loop."""

    def test_nan_loss_raises_with_epoch(self, small_dataset):
        """Test a NaN loss stops training with the failing epoch."""

        def step(_params, _batch, _groups, epoch):
            return (float("nan") if epoch == 1 else 1.0), {}

        with pytest.raises(TrainingFailureError) as info:
            fit("toy", _params(x=np.zeros(1)), small_dataset.train, TrainConfig(epochs=3), step, lambda _p: (1.0, 0.5))
        assert info.value.epoch == 1

    def test_best_epoch_has_lowest_validation_loss(self, small_dataset):
        """Test the returned parameters come from the epoch with the lowest val loss."""
        losses = iter([3.0, 1.0, 2.0])

        def step(params, _batch, _groups, _epoch):
            return 0.0, {"x": np.ones(1)}

        params = _params(x=np.zeros(1))
        snapshots = []

        def validate(current):
            snapshots.append(current.arrays["x"].copy())
            return next(losses), 0.0

        cfg = TrainConfig(epochs=3, batch_size=64, learning_rate=0.1, weight_decay=0.0)
        best, report = fit("toy", params, small_dataset.train, cfg, step, validate, PerformanceMetrics())
        assert report.best_epoch == 1
        np.testing.assert_array_equal(best.arrays["x"], snapshots[1])

    def test_epoch_durations_are_recorded(self, small_dataset):
        """Test each epoch lands in the metrics collector."""
        metrics = PerformanceMetrics()
        fit("toy", _params(), small_dataset.train, TrainConfig(epochs=2), lambda *_: (0.0, {}), lambda _p: (0.0, 0.0), metrics)
        assert metrics.get_metrics_summary()["training_epochs"]["toy"]["epochs"] == 2


class TestRewardTraining:
    """Test Stage 1."""

    def test_zero_learning_rate_keeps_initialization(self, small_dataset, tiny_encoder, fast_train):
        """Test lr = 0 leaves every parameter at its initial value."""
        cfg = fast_train.model_copy(update={"learning_rate": 0.0})
        params, _ = train_reward(small_dataset, cfg, tiny_encoder)
        world = small_dataset.world
        initial = init_reward_params(tiny_encoder, world.features_dim, world.item_dim, world.list_size, np.random.default_rng(cfg.seed))
        assert params.identical_to(initial)

    def test_runs_are_deterministic(self, small_dataset, tiny_encoder, fast_train):
        """Test two runs with one config give equal reports and parameters."""
        first, first_report = train_reward(small_dataset, fast_train, tiny_encoder)
        second, second_report = train_reward(small_dataset, fast_train, tiny_encoder)
        assert first_report.rows() == second_report.rows()
        assert first.identical_to(second)

    @pytest.mark.slow
    def test_constant_labels(self, small_dataset, tiny_encoder):
        """Test the model approaches a constant label of 0.5."""
        data = _with_labels(small_dataset, 0.5)
        cfg = TrainConfig(epochs=10, batch_size=8, learning_rate=1e-2, seed=3)
        world = data.world
        initial = init_reward_params(tiny_encoder, world.features_dim, world.item_dim, world.list_size, np.random.default_rng(3))
        batch = stack_groups(data.val)
        start = reward_loss_value(predict_reward(initial, batch.q, batch.items, batch.orders), batch.labels, "squared_error")
        _, report = train_reward(data, cfg, tiny_encoder)
        assert min(e.val_loss for e in report.epochs) < max(0.5 * start, 1e-3)

    def test_empty_training_split(self, small_world, fast_train):
        """Test an empty dataset is refused."""
        with pytest.raises(ContractViolationError):
            train_reward(Dataset(world=small_world), fast_train)

    def test_report_csv(self, tmp_path, small_dataset, tiny_encoder, fast_train):
        """Test the report is written in long format."""
        _, report = train_reward(small_dataset, fast_train, tiny_encoder)
        with open(report.to_csv(tmp_path / "train.csv"), newline="") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["epoch", "split", "metric", "value"]
        assert len(rows) == 1 + 3 * fast_train.epochs


class TestRankerTraining:
    """Test Stage 2."""

    @pytest.fixture
    def reward(self, small_dataset, tiny_encoder, fast_train):
        params, _ = train_reward(small_dataset, fast_train, tiny_encoder)
        return params

    def test_reward_stays_frozen(self, small_dataset, tiny_encoder, fast_train, reward):
        """Test Stage 2 never updates the reward model."""
        before = reward.copy()
        train_ranker(small_dataset, reward, fast_train, tiny_encoder)
        assert reward.identical_to(before)

    @pytest.mark.parametrize("use_ste", [False, True])
    def test_training_is_finite(self, small_dataset, tiny_encoder, fast_train, reward, use_ste):
        """Test SoftSort and straight-through training both produce finite parameters."""
        cfg = fast_train.model_copy(update={"use_ste": use_ste, "lam": 0.5, "tau": 0.5})
        ranker, report = train_ranker(small_dataset, reward, cfg, tiny_encoder)
        assert ranker.all_finite()
        assert 0 <= report.best_epoch < cfg.epochs
        assert all(0.0 < e.val_mean_reward < 1.0 for e in report.epochs)

    def test_warm_start_does_not_touch_init(self, small_dataset, tiny_encoder, fast_train, reward):
        """Test training from an initial ranker copies it first."""
        start, _ = train_ranker(small_dataset, reward, fast_train, tiny_encoder)
        snapshot = start.copy()
        train_ranker(small_dataset, reward, fast_train, tiny_encoder, init=start)
        assert start.identical_to(snapshot)


FIT_ENCODER = EncoderConfig(depth=1, width=16, heads=2, ffn_multiplier=2)
FIT_TRAIN = TrainConfig(epochs=25, batch_size=16, learning_rate=5e-3, weight_decay=0.0, seed=7, lr_decay_epoch=18)


def _fit_world(label_mode: str) -> Dataset:
    return generate(SyntheticWorldConfig(query_dim=2, item_dim=2, list_size=4, label_mode=label_mode, seed=21), 800)


@pytest.fixture(scope="module")
def kd_dataset() -> Dataset:
    return _fit_world("soft_ips")


@pytest.fixture(scope="module")
def kd_reward(kd_dataset):
    return train_reward(kd_dataset, FIT_TRAIN, FIT_ENCODER)


@pytest.mark.slow
class TestTrainingOutcomes:
    """Test what the two stages achieve on a small world."""

    def test_reward_fits_soft_labels(self, kd_dataset, kd_reward):
        """Test Stage 1 reaches a validation squared error below 0.01 on U_IPS labels."""
        params, report = kd_reward
        batch = stack_groups(kd_dataset.val)
        error = reward_loss_value(predict_reward(params, batch.q, batch.items, batch.orders), batch.labels, "squared_error")
        assert error == pytest.approx(report.epochs[report.best_epoch].val_loss)
        assert error < 0.01
        assert error < np.var(batch.labels)

    def test_binary_cross_entropy_beats_constant(self):
        """Test Stage 1 on click labels beats predicting the training click rate everywhere."""
        dataset = _fit_world("binary_click")
        params, _ = train_reward(dataset, FIT_TRAIN.model_copy(update={"loss": "cross_entropy"}), FIT_ENCODER)
        batch = stack_groups(dataset.val)
        rate = float(np.mean([g.label for g in dataset.train]))
        constant = reward_loss_value(np.full(len(batch), rate), batch.labels, "cross_entropy")
        learned = reward_loss_value(predict_reward(params, batch.q, batch.items, batch.orders), batch.labels, "cross_entropy")
        assert learned < constant

    def test_ranker_improves_on_logged_orders(self, kd_dataset, kd_reward):
        """Test Stage 2 orders score at least as high under g as the logged orders."""
        reward, _ = kd_reward
        cfg = FIT_TRAIN.model_copy(update={"epochs": 10, "tau": 0.5, "lam": 0.0})
        ranker, _ = train_ranker(kd_dataset, reward, cfg, FIT_ENCODER)
        batch = stack_groups(kd_dataset.val)
        logged = float(np.mean(predict_reward(reward, batch.q, batch.items, batch.orders)))
        assert mean_reward_of_ranker(ranker, reward, batch) >= logged
