import json
import logging
import math

import numpy as np
import pytest

from factories import make_group
from permurank.datagen.generator import generate
from permurank.errors import ContractViolationError, DomainError, SchemaError
from permurank.evaluation.judge_exchange import judge_exchange_export, judge_exchange_import, simulate_judge_responses
from permurank.evaluation.metrics import MetricRow, MetricsReport, dcg, ndcg_of_order, ndcg_rel, summarize
from permurank.evaluation.protocols import (
    IDEAL,
    LOGGED,
    POLICY_IN_DATA,
    compute_orders,
    dcg_clicks,
    eval_kd,
    eval_lau,
    exhaustive_behavioral_reranker,
    logged_reranker,
    random_reranker,
    ranker_reranker,
    relevance_reranker,
)
from permurank.models.params import EncoderConfig, init_ranker_params
from permurank.monitoring.metrics import global_metrics
from permurank.oracles.behavioral import BehavioralUserConfig
from permurank.oracles.ips import IpsOracle
from permurank.sorting.softsort import hard_orders


@pytest.fixture
def test_groups(small_dataset):
    return small_dataset.val + small_dataset.test


@pytest.fixture
def shopper():
    return BehavioralUserConfig()


class TestMetrics:
    """Test ranking metrics and their aggregation."""

    def test_reversed_order_example(self):
        """Test NDCG of gains (1, 0.5, 0) shown in reverse."""
        assert ndcg_of_order(np.array([1.0, 0.5, 0.0]), np.array([2, 1, 0]), 3) == pytest.approx(0.61990, abs=1e-5)

    def test_dcg_example(self):
        """Test DCG@3 of gains [1, 0, 1]."""
        assert dcg(np.array([1.0, 0.0, 1.0]), 3) == pytest.approx(1.5)

    def test_ndcg_rel_edges(self, rng):
        """Test ideal and tied cases score 1, and k must be positive."""
        rel = rng.normal(size=6)
        assert ndcg_rel(rel, rel, 4) == pytest.approx(1.0)
        assert ndcg_rel(rng.normal(size=6), np.zeros(6), 4) == pytest.approx(1.0)
        assert ndcg_rel(-rel, rel, 10) < 1.0
        with pytest.raises(ContractViolationError):
            ndcg_rel(rel, rel, 0)

    def test_summary_matches_streaming_recomputation(self, rng):
        """Test mean and standard error against a one-pass Welford computation."""
        values = rng.uniform(size=137)
        count, mean, m2 = 0, 0.0, 0.0
        for x in values:
            count += 1
            delta = x - mean
            mean += delta / count
            m2 += delta * (x - mean)
        row = summarize("m", "U_IPS", values)
        assert row.n == 137
        assert row.mean == pytest.approx(mean, abs=1e-12)
        assert row.se == pytest.approx(math.sqrt(m2 / (count - 1)) / math.sqrt(count), abs=1e-12)

    def test_summary_edges(self):
        """Test one value has zero error and no values is refused."""
        assert summarize("m", "x", [0.4]).se == 0.0
        with pytest.raises(ContractViolationError):
            summarize("m", "x", [])


class TestMetricsReport:
    """Test the report container."""

    def _report(self) -> MetricsReport:
        return MetricsReport(
            rows=[
                MetricRow(method="a", metric="U_IPS", mean=0.1 + 0.2, se=1e-3, n=10),
                MetricRow(method="a", metric="P_purchase", cutoff=0.4, mean=1 / 3, se=0.0, n=1),
            ],
            notes={"skipped": 2},
        )

    def test_csv_round_trip(self, tmp_path):
        """Test CSV keeps every float exactly."""
        report = self._report()
        loaded = MetricsReport.from_csv(report.to_csv(tmp_path / "metrics.csv"))
        assert loaded.rows == report.rows

    def test_csv_wrong_header(self, tmp_path):
        """Test a CSV with other columns is refused."""
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(SchemaError):
            MetricsReport.from_csv(path)

    def test_csv_bad_value(self, tmp_path):
        """Test an unparsable number names its line."""
        path = tmp_path / "bad.csv"
        path.write_text("method,metric,cutoff,mean,se,n\nx,U_IPS,,oops,0.0,3\n")
        with pytest.raises(SchemaError, match="line 2"):
            MetricsReport.from_csv(path)

    def test_get_and_merge(self):
        """Test lookup, and that merge keeps existing rows and adds notes."""
        report = self._report()
        assert report.get("a", "P_purchase", 0.4).n == 1
        with pytest.raises(KeyError):
            report.get("b", "U_IPS")
        other = MetricsReport(
            rows=[MetricRow(method="a", metric="U_IPS", mean=9.0, se=0.0, n=1), MetricRow(method="b", metric="U_IPS", mean=0.5, se=0.0, n=1)],
            notes={"skipped": 1},
        )
        report.merge(other)
        assert report.get("a", "U_IPS").mean == pytest.approx(0.3)
        assert report.methods() == ["a", "b"]
        assert report.notes["skipped"] == 3
        assert report.to_table().row_count == 3


class TestKdEval:
    """Test the click-oracle protocol."""

    def test_rows(self, test_groups):
        """Test the method, Ideal and Logged rows are reported."""
        report = eval_kd(random_reranker(0), IpsOracle(), test_groups, 8, method="random")
        assert report.methods() == ["random", IDEAL, LOGGED]
        for method in report.methods():
            assert report.get(method, "U_IPS").n == len(test_groups)
            assert 0.0 <= report.get(method, "NDCG_rel@8").mean <= 1.0

    def test_relevance_sort_equals_ideal(self, test_groups):
        """Test a ranker that sorts by true relevance matches the Ideal row."""
        report = eval_kd(relevance_reranker, IpsOracle(), test_groups, 5, method="oracle")
        assert report.get("oracle", "U_IPS") == report.get(IDEAL, "U_IPS").model_copy(update={"method": "oracle"})
        assert report.get("oracle", "NDCG_rel@5").mean == 1.0

    def test_ideal_dominates_every_ranker(self, test_groups, small_dataset, tiny_encoder, rng):
        """Test Ideal is never beaten, here by an untrained ranker."""
        world = small_dataset.world
        ranker = init_ranker_params(tiny_encoder, world.features_dim, world.item_dim, world.list_size, rng)
        report = eval_kd(ranker_reranker(ranker), IpsOracle(), test_groups, 8)
        assert report.get(IDEAL, "U_IPS").mean >= report.get("ranker", "U_IPS").mean

    def test_ideal_follows_custom_relevance(self, test_groups):
        """Test Ideal sorts the oracle's own relevance when it differs from the latent R."""
        oracle = IpsOracle(relevance_fn=lambda g: -g.rel_logits)

        def ascending(groups):
            return hard_orders(np.stack([-g.rel_logits for g in groups]))

        report = eval_kd(ascending, oracle, test_groups, 5, method="ascending")
        ideal = report.get(IDEAL, "U_IPS")
        assert report.get("ascending", "U_IPS").mean == pytest.approx(ideal.mean, abs=1e-12)
        assert report.get("ascending", "NDCG_rel@5").mean == pytest.approx(1.0)
        latent = eval_kd(relevance_reranker, oracle, test_groups, 5, method="latent")
        assert latent.get(IDEAL, "U_IPS").mean > latent.get("latent", "U_IPS").mean

    def test_records_timing(self, test_groups):
        """Test each evaluation adds one eval_kd timing to the global collector."""
        before = len(global_metrics.timings.get("eval_kd", []))
        eval_kd(logged_reranker, IpsOracle(), test_groups, 5)
        assert len(global_metrics.timings["eval_kd"]) == before + 1

    def test_invalid_k(self, test_groups):
        """Test k below 1 is refused."""
        with pytest.raises(ContractViolationError):
            eval_kd(logged_reranker, IpsOracle(), test_groups, 0)

    def test_empty_groups(self):
        """Test evaluation needs data."""
        with pytest.raises(ContractViolationError):
            eval_kd(logged_reranker, IpsOracle(), [], 5)


class TestLauEval:
    """Test the simulated-shopper protocol."""

    def test_identity_equals_policy_in_data(self, test_groups, shopper):
        """Test keeping the logged order reproduces the policy-in-data row exactly."""
        report = eval_lau(logged_reranker, shopper, test_groups, cutoffs=[0.8, 0.6, 0.4], method="identity")
        for row in report.rows:
            if row.method == "identity":
                reference = report.get(POLICY_IN_DATA, "P_purchase", row.cutoff)
                assert (row.mean, row.se, row.n) == (reference.mean, reference.se, reference.n)

    def test_cutoffs_are_nested(self, test_groups, shopper):
        """Test stricter cutoffs select fewer groups."""
        report = eval_lau(relevance_reranker, shopper, test_groups, cutoffs=[1.0, 0.8, 0.6, 0.4])
        counts = []
        for c in (None, 1.0, 0.8, 0.6, 0.4):
            try:
                counts.append(report.get("ranker", "P_purchase", c).n)
            except KeyError:
                counts.append(0)
        assert counts == sorted(counts, reverse=True)

    @pytest.mark.parametrize("cutoff", [0.0, -0.1, 1.5])
    def test_invalid_cutoff(self, test_groups, shopper, cutoff):
        """Test cutoffs outside (0, 1] are domain errors."""
        with pytest.raises(DomainError):
            eval_lau(logged_reranker, shopper, test_groups, cutoffs=[cutoff])

    def test_empty_cutoff_is_noted(self, test_groups, shopper):
        """Test a cutoff that selects nothing leaves a note instead of a row."""
        report = eval_lau(logged_reranker, shopper, test_groups, cutoffs=[1e-9])
        assert report.notes["empty_cutoff_1e-09"] == 1
        with pytest.raises(KeyError):
            report.get("ranker", "P_purchase", 1e-9)

    def test_exhaustive_search_is_an_upper_bound(self, test_groups, shopper):
        """Test the best-of-all-orders reranker beats every other reranker on each group."""
        best = eval_lau(exhaustive_behavioral_reranker(shopper), shopper, test_groups, cutoffs=[]).get("ranker", "P_purchase").mean
        for reranker in (logged_reranker, relevance_reranker, random_reranker(3)):
            assert best >= eval_lau(reranker, shopper, test_groups, cutoffs=[]).get("ranker", "P_purchase").mean

    def test_exhaustive_search_size_limit(self, shopper):
        """Test exhaustive search refuses long lists."""
        with pytest.raises(ContractViolationError):
            exhaustive_behavioral_reranker(shopper)([make_group(np.zeros(9))])


class TestDcgClicks:
    """Test the logged-click protocol."""

    def test_zero_clicks(self):
        """Test a list without clicks scores 0."""
        report = dcg_clicks(logged_reranker, [make_group(np.zeros(5))], 5)
        assert report.get("ranker", "DCG@5").mean == 0.0

    def test_clicked_items_first(self):
        """Test clicked items ranked on top give the sum of the first discounts."""
        group = make_group(np.zeros(5), clicks=[0, 1, 0, 1, 0])

        def clicked_first(groups):
            return np.array([[1, 3, 0, 2, 4]])

        report = dcg_clicks(clicked_first, [group], 5)
        assert report.get("ranker", "DCG@5").mean == pytest.approx(1.0 + 1.0 / np.log2(3.0))
        assert report.get(LOGGED, "DCG@5").mean == pytest.approx(1.0 / np.log2(3.0) + 1.0 / np.log2(5.0))


def test_parallel_chunks_keep_order(small_world):
    groups = generate(small_world, 600).all_groups()
    sequential = compute_orders(random_reranker(5), groups, workers=1)
    parallel = compute_orders(random_reranker(5), groups, workers=4)
    np.testing.assert_array_equal(sequential, parallel)
    assert sequential.shape == (600, 4)


def test_reranking_is_traced(small_world, caplog):
    """Test compute_orders and the ranker closure log their start and return."""
    groups = generate(small_world, 12).all_groups()
    encoder = EncoderConfig(depth=1, width=8, heads=2)
    params = init_ranker_params(encoder, small_world.features_dim, small_world.item_dim, small_world.list_size, np.random.default_rng(0))
    with caplog.at_level(logging.DEBUG, logger="permurank"):
        compute_orders(ranker_reranker(params), groups)
    for message in ("compute_orders starting", "ranker rerank returning", "score_items returning", "compute_orders returning 12 orders"):
        assert message in caplog.text


class TestJudgeExchange:
    """Test the request and response files of an external judge."""

    @pytest.fixture
    def responses(self, tmp_path, test_groups, shopper):
        orders = relevance_reranker(test_groups)
        requests = judge_exchange_export(test_groups, orders, tmp_path / "requests.jsonl", method="ideal")
        return simulate_judge_responses(requests, tmp_path / "responses.jsonl", shopper)

    def test_round_trip_equals_simulator(self, responses, test_groups, shopper):
        """Test simulated responses aggregate to exactly the eval_lau report."""
        imported = judge_exchange_import(responses, test_groups, method="ideal")
        direct = eval_lau(relevance_reranker, shopper, test_groups, method="ideal")
        assert imported.rows == direct.rows
        assert all(imported.notes[key] == 0 for key in ("skipped", "duplicates", "unknown"))

    def test_request_format(self, tmp_path, test_groups):
        """Test each request lists items with brand, color and relevance."""
        path = judge_exchange_export(test_groups, logged_reranker(test_groups), tmp_path / "req.jsonl")
        lines = path.read_text().splitlines()
        assert json.loads(lines[0])["schema"] == "permurank.judge_request"
        record = json.loads(lines[1])
        assert set(record) == {"group_id", "query_id", "items", "order"}
        assert set(record["items"][0]) == {"id", "brand", "color", "rel"}
        assert len(lines) == len(test_groups) + 1

    def test_order_count_mismatch(self, tmp_path, test_groups):
        """Test every group needs an order."""
        with pytest.raises(ContractViolationError):
            judge_exchange_export(test_groups, logged_reranker(test_groups)[:-1], tmp_path / "req.jsonl")

    def test_missing_responses_are_skipped(self, responses, test_groups):
        """Test groups without a response are counted and left out."""
        lines = responses.read_text().splitlines()
        kept = [line for number, line in enumerate(lines) if number == 0 or number % 10 != 1]
        responses.write_text("\n".join(kept) + "\n")
        missing = len(lines) - len(kept)
        report = judge_exchange_import(responses, test_groups)
        assert report.notes["skipped"] == missing
        assert report.get("ranker", "P_purchase").n == len(test_groups) - missing

    def test_duplicate_responses_last_wins(self, responses, test_groups):
        """Test a repeated group keeps its last response."""
        first = json.loads(responses.read_text().splitlines()[1])
        with open(responses, "a") as handle:
            handle.write(json.dumps({"group_id": first["group_id"], "p_purchase": 1.0, "chosen_item": 0}) + "\n")
            handle.write(json.dumps({"group_id": 10_000, "p_purchase": 0.5, "chosen_item": 0}) + "\n")
        report = judge_exchange_import(responses, test_groups)
        assert report.notes["duplicates"] == 1
        assert report.notes["unknown"] == 1
        values = [json.loads(line)["p_purchase"] for line in responses.read_text().splitlines()[2 : len(test_groups) + 1]]
        expected = (sum(values) + 1.0) / len(test_groups)
        assert report.get("ranker", "P_purchase").mean == pytest.approx(expected, abs=1e-12)

    def test_malformed_line(self, responses, test_groups):
        """Test a broken response line is reported with its number."""
        lines = responses.read_text().splitlines()
        lines[2] = '{"group_id": '
        responses.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match="line 3"):
            judge_exchange_import(responses, test_groups)

    def test_probability_out_of_range(self, responses, test_groups):
        """Test p_purchase must be a probability."""
        with open(responses, "a") as handle:
            handle.write(json.dumps({"group_id": test_groups[0].group_id, "p_purchase": 1.2, "chosen_item": 0}) + "\n")
        with pytest.raises(SchemaError, match="outside"):
            judge_exchange_import(responses, test_groups)

    def test_wrong_header(self, tmp_path, test_groups):
        """Test a request file is not accepted as responses."""
        path = judge_exchange_export(test_groups, logged_reranker(test_groups), tmp_path / "req.jsonl")
        with pytest.raises(SchemaError, match="schema"):
            judge_exchange_import(path, test_groups)
