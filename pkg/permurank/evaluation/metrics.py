"""Ranking metrics and the report container with standard errors."""

import csv
import logging
from collections.abc import Iterable
from pathlib import Path

import numpy as np
from pydantic import BaseModel
from rich.table import Table

from permurank.errors import ContractViolationError, SchemaError
from permurank.sorting.softsort import hard_orders

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "metric", "cutoff", "mean", "se", "n")


def discounts(size: int) -> np.ndarray:
    """1 / log2(k + 1) for 1-based positions k = 1..size."""
    return 1.0 / np.log2(np.arange(size) + 2.0)


def dcg(gains_in_order: np.ndarray, k: int | None = None) -> np.ndarray | float:
    """Discounted cumulative gain of gains listed in display order, along the last axis.

    Args:
        gains_in_order: Gain of the item at each position, shape (..., L).
        k: Cutoff; all positions when None.

    Returns:
        DCG per list (a float for a single list).

    """
    gains = np.asarray(gains_in_order, dtype=np.float64)
    depth = gains.shape[-1] if k is None else min(k, gains.shape[-1])
    value = np.sum(gains[..., :depth] * discounts(depth), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def gain_values(rel_logits: np.ndarray, exponential: bool = False) -> np.ndarray:
    """Gains from relevance logits: sigmoid(R), or 2^sigmoid(R) - 1 with exponential=True."""
    probs = 1.0 / (1.0 + np.exp(-np.asarray(rel_logits, dtype=np.float64)))
    return np.exp2(probs) - 1.0 if exponential else probs


def ndcg_of_order(gains: np.ndarray, order: np.ndarray, k: int) -> np.ndarray | float:
    """NDCG@k of an order given per-item gains; lists whose ideal DCG is 0 score 1."""
    if k < 1:
        _msg = f"k must be at least 1, got {k}"
        raise ContractViolationError(_msg)
    gains = np.asarray(gains, dtype=np.float64)
    shown = np.take_along_axis(gains, np.asarray(order, dtype=np.int64), axis=-1)
    ideal = np.asarray(dcg(-np.sort(-gains, axis=-1), k))
    actual = np.asarray(dcg(shown, k))
    value = np.where(ideal > 0.0, actual / np.where(ideal > 0.0, ideal, 1.0), 1.0)
    return float(value) if value.ndim == 0 else value


def ndcg_rel(scores: np.ndarray, rel_logits: np.ndarray, k: int, exponential: bool = False) -> float:
    """NDCG@k of the ranking induced by scores, with relevance gains from the oracle's logits.

    Args:
        scores: Ranker scores per item.
        rel_logits: Relevance logits R per item.
        k: Cutoff, at least 1; values above L use the whole list.
        exponential: Use 2^g - 1 gains instead of g = sigmoid(R).

    Returns:
        float: Value in [0, 1]; 1.0 when the order matches descending relevance.

    """
    return float(ndcg_of_order(gain_values(rel_logits, exponential), hard_orders(scores), k))


class MetricRow(BaseModel):
    """Mean, standard error and count of one metric for one method."""

    method: str
    metric: str
    cutoff: float | None = None
    """Threshold c of a cutoff-conditional entry; None for the overall value."""

    mean: float
    se: float
    """Sample standard deviation (ddof=1) over groups divided by sqrt(n); 0 when n = 1."""

    n: int


def summarize(method: str, metric: str, values: Iterable[float], cutoff: float | None = None) -> MetricRow:
    """Aggregate per-group values into a MetricRow."""
    data = np.asarray(list(values), dtype=np.float64)
    if data.size == 0:
        _msg = f"no values for {method}/{metric}"
        raise ContractViolationError(_msg)
    se = float(np.std(data, ddof=1) / np.sqrt(data.size)) if data.size > 1 else 0.0
    return MetricRow(method=method, metric=metric, cutoff=cutoff, mean=float(np.mean(data)), se=se, n=int(data.size))


class MetricsReport(BaseModel):
    """Rows of (method, metric, cutoff) statistics plus bookkeeping notes."""

    rows: list[MetricRow] = []
    notes: dict[str, int] = {}
    """Counters such as skipped groups or duplicate responses."""

    def add(self, row: MetricRow) -> None:
        """Append one row."""
        self.rows.append(row)

    def get(self, method: str, metric: str, cutoff: float | None = None) -> MetricRow:
        """Look up one row; raises KeyError when absent."""
        for row in self.rows:
            if row.method == method and row.metric == metric and row.cutoff == cutoff:
                return row
        _msg = f"no row for {method}/{metric}/{cutoff}"
        raise KeyError(_msg)

    def methods(self) -> list[str]:
        """Method names in first-seen order."""
        return list(dict.fromkeys(row.method for row in self.rows))

    def extend(self, other: "MetricsReport") -> None:
        """Append another report's rows and add its notes."""
        self.rows.extend(other.rows)
        for key, value in other.notes.items():
            self.notes[key] = self.notes.get(key, 0) + value

    def merge(self, other: "MetricsReport") -> None:
        """Like extend, but rows whose (method, metric, cutoff) is already present are dropped."""
        seen = {(row.method, row.metric, row.cutoff) for row in self.rows}
        self.extend(MetricsReport(rows=[r for r in other.rows if (r.method, r.metric, r.cutoff) not in seen], notes=other.notes))

    def to_csv(self, path: Path | str) -> Path:
        """Write the rows as CSV; floats keep their round-trip representation."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                cutoff = "" if row.cutoff is None else repr(row.cutoff)
                writer.writerow([row.method, row.metric, cutoff, repr(row.mean), repr(row.se), row.n])
        return target

    @classmethod
    def from_csv(cls, path: Path | str) -> "MetricsReport":
        """Read a CSV written by to_csv."""
        source = Path(path)
        report = cls()
        with open(source, newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                _msg = f"{source}: expected columns {CSV_COLUMNS}, found {reader.fieldnames}"
                raise SchemaError(_msg)
            for number, record in enumerate(reader, start=2):
                try:
                    report.add(
                        MetricRow(
                            method=record["method"],
                            metric=record["metric"],
                            cutoff=float(record["cutoff"]) if record["cutoff"] else None,
                            mean=float(record["mean"]),
                            se=float(record["se"]),
                            n=int(record["n"]),
                        )
                    )
                except (TypeError, ValueError) as e:
                    _msg = f"{source}: line {number} is malformed: {e}"
                    raise SchemaError(_msg) from e
        return report

    def to_table(self, title: str = "Metrics") -> Table:
        """Render the rows as a rich table."""
        table = Table(title=title)
        for column in ("method", "metric", "cutoff", "mean ± se", "n"):
            table.add_column(column)
        for row in self.rows:
            cutoff = "" if row.cutoff is None else f"c<{row.cutoff:g}"
            table.add_row(row.method, row.metric, cutoff, f"{row.mean:.4f} ± {row.se:.4f}", str(row.n))
        return table
