import gzip
import json
import logging
from unittest.mock import patch

import numpy as np
import pytest
from scipy.stats import chisquare, kendalltau

from permurank.datagen.generator import generate, relevance_matrix, split_queries
from permurank.datagen.io import load_dataset, open_text, read_data, save_dataset, save_splits
from permurank.datagen.models import Dataset, SyntheticWorldConfig, stack_groups
from permurank.errors import ContractViolationError, SchemaError
from permurank.evaluation.metrics import gain_values, ndcg_of_order
from permurank.oracles.behavioral import BehavioralUserConfig
from permurank.oracles.ips import IpsOracle, ideal_permutation


def _same_dataset(a: Dataset, b: Dataset) -> bool:
    if a.world != b.world:
        return False
    for split in ("train", "val", "test"):
        left, right = a.split(split), b.split(split)
        if len(left) != len(right) or not all(x.same_as(y) for x, y in zip(left, right, strict=True)):
            return False
    return True


class TestGenerate:
    """Test the synthetic world generator."""

    def test_split_proportions(self):
        """Test 1000 groups split into exactly 800/100/100."""
        dataset = generate(SyntheticWorldConfig(list_size=4, query_dim=3, item_dim=3), 1000)
        assert (len(dataset.train), len(dataset.val), len(dataset.test)) == (800, 100, 100)

    def test_noise_free_logging_is_ideal(self):
        """Test that without logging noise every logged order sorts by relevance."""
        dataset = generate(SyntheticWorldConfig(logging_noise=0.0, list_size=6, seed=4), 30)
        for group in dataset.all_groups():
            assert tuple(group.logged_order.tolist()) == ideal_permutation(group.rel_logits).order

    def test_same_seed_same_dataset(self, small_world):
        """Test that generation is a pure function of the config."""
        assert _same_dataset(generate(small_world, 20), generate(small_world, 20))

    def test_other_seed_differs(self, small_world):
        """Test that a different seed changes the data."""
        first = generate(small_world, 20)
        second = generate(small_world.model_copy(update={"seed": 12}), 20)
        assert not np.array_equal(first.train[0].q, second.train[0].q)

    def test_too_few_groups(self, small_world):
        """Test that fewer than ten groups are refused."""
        with pytest.raises(ContractViolationError):
            generate(small_world, 9)

    def test_permutations_share_their_query(self):
        """Test repeated impressions of one query stay together."""
        dataset = generate(SyntheticWorldConfig(list_size=4, perms_per_group=5, seed=2), 100)
        by_split = {split: {g.query_id for g in dataset.split(split)} for split in ("train", "val", "test")}
        assert not by_split["train"] & by_split["val"]
        assert not by_split["train"] & by_split["test"]
        first = [g for g in dataset.all_groups() if g.query_id == 0]
        assert len(first) == 5
        assert all(np.array_equal(g.items, first[0].items) for g in first)
        assert len({g.group_id for g in dataset.all_groups()}) == 100

    @pytest.mark.parametrize("mode", ["binary_click", "soft_ips", "behavioral"])
    def test_label_modes(self, mode):
        """Test the label follows the configured mode."""
        dataset = generate(SyntheticWorldConfig(list_size=5, label_mode=mode), 20)
        labels = np.array([g.label for g in dataset.all_groups()])
        assert np.all((labels >= 0.0) & (labels <= 1.0))
        if mode == "binary_click":
            assert set(labels.tolist()) <= {0.0, 1.0}
        if mode == "behavioral":
            assert labels.tolist() == [g.purchase_prob for g in dataset.all_groups()]

    def test_brand_and_color_marginals(self):
        """Test brands and colors are drawn uniformly (chi-squared at the 0.1% level)."""
        dataset = generate(SyntheticWorldConfig(list_size=8, n_brands=4, n_colors=4, seed=9), 500)
        for name in ("brands", "colors"):
            values = np.concatenate([getattr(g, name) for g in dataset.all_groups()])
            assert chisquare(np.bincount(values, minlength=4)).pvalue > 1e-3

    def test_relevance_form_scale(self):
        """Test W entries have standard deviation 1/sqrt(rows * cols)."""
        weights = relevance_matrix(SyntheticWorldConfig(query_dim=40, item_dim=50))
        assert np.std(weights) == pytest.approx(1.0 / np.sqrt(2000), rel=0.05)


def _logged_world(logging_noise: float) -> Dataset:
    return generate(SyntheticWorldConfig(logging_noise=logging_noise, seed=13), 400)


def _mean_kendall(dataset: Dataset) -> float:
    taus = [kendalltau(g.rel_logits, -np.argsort(g.logged_order)).statistic for g in dataset.all_groups()]
    return float(np.mean(taus))


def _mean_logged_ndcg(dataset: Dataset) -> float:
    groups = dataset.all_groups()
    gains = gain_values(np.stack([g.rel_logits for g in groups]))
    orders = np.stack([g.logged_order for g in groups])
    return float(np.mean(ndcg_of_order(gains, orders, orders.shape[1])))


class TestLoggingPolicy:
    """Test how the logging noise shapes the logged data."""

    def test_mean_label_is_not_degenerate(self):
        """Test the default soft U_IPS labels average strictly inside (0.1, 0.9)."""
        labels = [g.label for g in generate(SyntheticWorldConfig(), 400).all_groups()]
        assert 0.1 < np.mean(labels) < 0.9

    def test_noise_free_logging_has_full_rank_correlation(self):
        """Test Kendall tau is exactly 1 when the logger sorts by R."""
        assert _mean_kendall(_logged_world(0.0)) == pytest.approx(1.0)

    @pytest.mark.parametrize(("lower", "higher"), [(0.0, 0.5), (0.5, 1.0), (1.0, 2.0)])
    def test_rank_correlation_falls_with_noise(self, lower, higher):
        """Test Kendall tau between the logged order and descending R drops as logging noise grows."""
        assert _mean_kendall(_logged_world(lower)) > _mean_kendall(_logged_world(higher))

    def test_heavy_noise_approaches_uniform_ndcg(self):
        """Test logged NDCG under heavy noise matches a Monte Carlo uniform-permutation reference."""
        dataset = _logged_world(100.0)
        groups = dataset.all_groups()
        gains = gain_values(np.stack([g.rel_logits for g in groups]))
        rng = np.random.default_rng(0)
        size = gains.shape[1]
        reference = np.mean([np.mean(ndcg_of_order(gains, np.stack([rng.permutation(size) for _ in groups]), size)) for _ in range(20)])
        assert _mean_logged_ndcg(dataset) == pytest.approx(reference, abs=0.03)
        assert _mean_logged_ndcg(_logged_world(0.0)) == pytest.approx(1.0)
        assert _mean_logged_ndcg(_logged_world(1.0)) > reference + 0.05


def test_split_is_a_partition():
    parts = split_queries(3, list(range(57)))
    assert set().union(*parts.values()) == set(range(57))
    assert sum(len(p) for p in parts.values()) == 57
    assert split_queries(3, list(range(57))) == parts


def test_world_config_validation():
    with pytest.raises(ValueError):
        SyntheticWorldConfig(list_size=11)
    with pytest.raises(ValueError):
        SyntheticWorldConfig(logging_noise=-1.0)
    with pytest.raises(ValueError):
        SyntheticWorldConfig(unknown=1)


def test_stack_groups(small_dataset):
    batch = stack_groups(small_dataset.train[:3])
    assert batch.items.shape == (3, 4, 3)
    assert len(batch) == 3


class TestDatasetFiles:
    """Test JSONL dataset files."""

    @pytest.mark.parametrize("name", ["data.jsonl", "data.jsonl.gz"])
    def test_round_trip(self, tmp_path, small_dataset, name):
        """Test save then load reproduces every field bit for bit."""
        path = save_dataset(small_dataset, tmp_path / name)
        assert _same_dataset(load_dataset(path), small_dataset)

    @pytest.mark.parametrize("name", ["data.jsonl", "data.jsonl.gz"])
    def test_files_are_byte_identical(self, tmp_path, small_world, name):
        """Test two generations with one seed write identical bytes."""
        first = save_dataset(generate(small_world, 20), tmp_path / "a" / name)
        second = save_dataset(generate(small_world, 20), tmp_path / "b" / name)
        assert first.read_bytes() == second.read_bytes()

    @pytest.mark.parametrize("name", ["data.jsonl", "data.jsonl.gz"])
    def test_open_text_closes_every_handle(self, tmp_path, name):
        """Test the raw file behind a compressed writer is closed and fully flushed."""
        opened = []

        def tracking_open(*args, **kwargs):
            handle = open(*args, **kwargs)  # noqa: SIM115
            opened.append(handle)
            return handle

        path = tmp_path / name
        with patch("permurank.datagen.io.open", side_effect=tracking_open, create=True):
            with open_text(path, "w") as handle:
                handle.write("line\n")
        assert opened
        assert all(h.closed for h in opened)
        assert handle.closed
        raw = path.read_bytes()
        assert (gzip.decompress(raw) if name.endswith(".gz") else raw) == b"line\n"

    def test_unknown_field_warns(self, tmp_path, small_dataset, caplog):
        """Test unknown fields are ignored with a warning."""
        path = save_dataset(small_dataset, tmp_path / "data.jsonl")
        lines = path.read_text().splitlines()
        record = json.loads(lines[1])
        record["shelf"] = "top"
        lines[1] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with caplog.at_level(logging.WARNING):
            loaded = load_dataset(path)
        assert "shelf" in caplog.text
        assert _same_dataset(loaded, small_dataset)

    def test_empty_file(self, tmp_path):
        """Test an empty file is a schema error."""
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(SchemaError, match="empty"):
            load_dataset(path)

    def test_missing_file(self, tmp_path):
        """Test a missing file is a schema error."""
        with pytest.raises(SchemaError, match="not found"):
            load_dataset(tmp_path / "nope.jsonl")

    def test_bad_line_reports_number(self, tmp_path, small_dataset):
        """Test a truncated line is reported with its line number."""
        path = save_dataset(small_dataset, tmp_path / "data.jsonl")
        lines = path.read_text().splitlines()
        lines[3] = lines[3][:40]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match="line 4"):
            load_dataset(path)

    def test_version_mismatch(self, tmp_path, small_dataset):
        """Test a header with another version is refused."""
        path = save_dataset(small_dataset, tmp_path / "data.jsonl")
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["version"] = 2
        lines[0] = json.dumps(header)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match="version 2"):
            load_dataset(path)

    def test_per_split_directory(self, tmp_path, small_dataset):
        """Test save_splits writes one file per split and read_data merges them back."""
        written = save_splits(small_dataset, tmp_path)
        assert sorted(p.name for p in written.values()) == ["test.jsonl", "train.jsonl", "val.jsonl"]
        assert len(load_dataset(written["val"]).train) == 0
        assert _same_dataset(read_data(tmp_path), small_dataset)

    def test_directory_without_files(self, tmp_path):
        """Test read_data on an empty directory."""
        with pytest.raises(SchemaError):
            read_data(tmp_path)


TEN_POSITIONS = (1.0, 0.6738, 0.4145, 0.2932, 0.2079, 0.1714, 0.1363, 0.1166, 0.1, 0.09)


def test_ten_item_lists_with_ten_position_tables():
    dataset = generate(
        SyntheticWorldConfig(list_size=10, seed=6),
        20,
        oracle=IpsOracle(examination=TEN_POSITIONS),
        behavior=BehavioralUserConfig(position_scores=TEN_POSITIONS),
    )
    assert all(g.size == 10 for g in dataset.all_groups())
    assert all(sorted(g.logged_order.tolist()) == list(range(10)) for g in dataset.all_groups())


@pytest.mark.parametrize("size", [9, 10])
def test_lists_longer_than_default_tables_are_refused_up_front(size):
    with pytest.raises(ContractViolationError, match="examination table"):
        generate(SyntheticWorldConfig(list_size=size), 20)
    with pytest.raises(ContractViolationError, match="position scores"):
        generate(SyntheticWorldConfig(list_size=size), 20, oracle=IpsOracle(examination=TEN_POSITIONS))
