"""File exchange with an external list judge: request export, response import, and a simulated judge."""

import json
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

from permurank.datagen.io import check_header, open_text
from permurank.datagen.models import QueryGroup
from permurank.errors import ContractViolationError, SchemaError
from permurank.evaluation.metrics import MetricsReport
from permurank.evaluation.protocols import DEFAULT_CUTOFFS, check_cutoffs, lau_rows
from permurank.oracles.behavioral import BehavioralUserConfig, chosen_item, purchase_breakdown

log = logging.getLogger(__name__)

REQUEST_SCHEMA = "permurank.judge_request"
RESPONSE_SCHEMA = "permurank.judge_response"
EXCHANGE_VERSION = 1


def _records(path: Path, schema: str) -> list[tuple[int, dict[str, Any]]]:
    """Parse a header-plus-JSONL file into (line number, record) pairs."""
    if not path.exists():
        _msg = f"exchange file not found: {path}"
        raise SchemaError(_msg)
    records: list[tuple[int, dict[str, Any]]] = []
    with open_text(path, "r") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                _msg = f"{path}: line {number} is malformed ({e.msg})"
                raise SchemaError(_msg) from e
            if not isinstance(record, dict):
                _msg = f"{path}: line {number} is not a JSON object"
                raise SchemaError(_msg)
            records.append((number, record))
    if not records:
        _msg = f"{path}: file is empty"
        raise SchemaError(_msg)
    check_header(path, records[0][1], schema, EXCHANGE_VERSION)
    return records[1:]


def judge_exchange_export(groups: list[QueryGroup], orders: np.ndarray, path: Path | str, method: str = "ranker") -> Path:
    """Write one judge request per group.

    Args:
        groups: Groups to be judged.
        orders: Order to show for each group, (B, L).
        path: Request file (JSONL, .gz accepted).
        method: Name of the ranker that produced the orders.

    Returns:
        Path: The written file.

    """
    _msg = f"judge_exchange_export starting with {len(groups)} groups"
    log.debug(_msg)

    if len(groups) != len(orders):
        _msg = f"{len(orders)} orders for {len(groups)} groups"
        raise ContractViolationError(_msg)
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    header = {"schema": REQUEST_SCHEMA, "version": EXCHANGE_VERSION, "method": method}
    with open_text(target, "w") as handle:
        handle.write(json.dumps(header) + "\n")
        for group, order in zip(groups, orders, strict=True):
            items = [
                {"id": item, "brand": int(group.brands[item]), "color": int(group.colors[item]), "rel": float(rel)}
                for item, rel in enumerate(group.relevance)
            ]
            record = {"group_id": group.group_id, "query_id": group.query_id, "items": items, "order": [int(i) for i in order]}
            handle.write(json.dumps(record) + "\n")

    _msg = f"judge_exchange_export returning {target}"
    log.debug(_msg)
    return target


def simulate_judge_responses(request_path: Path | str, response_path: Path | str, cfg: BehavioralUserConfig) -> Path:
    """Answer a request file with the behavioral simulator, one response per request."""
    _msg = f"simulate_judge_responses starting for {request_path}"
    log.debug(_msg)

    source = Path(request_path)
    target = Path(response_path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open_text(target, "w") as handle:
        handle.write(json.dumps({"schema": RESPONSE_SCHEMA, "version": EXCHANGE_VERSION}) + "\n")
        for number, record in _records(source, REQUEST_SCHEMA):
            try:
                items = sorted(record["items"], key=lambda item: item["id"])
                relevance = np.array([item["rel"] for item in items], dtype=np.float64)
                brands = np.array([item["brand"] for item in items])
                colors = np.array([item["color"] for item in items])
                order = np.asarray(record["order"], dtype=np.int64)
                group_id = record["group_id"]
            except (KeyError, TypeError) as e:
                _msg = f"{source}: line {number} is missing a field: {e}"
                raise SchemaError(_msg) from e
            probability = purchase_breakdown(cfg, relevance, brands, colors, order).probability
            response = {"group_id": group_id, "p_purchase": probability, "chosen_item": chosen_item(cfg, relevance, order)}
            handle.write(json.dumps(response) + "\n")

    _msg = f"simulate_judge_responses returning {target}"
    log.debug(_msg)
    return target


def judge_exchange_import(
    response_path: Path | str,
    groups: list[QueryGroup],
    cutoffs: Sequence[float] = DEFAULT_CUTOFFS,
    method: str = "ranker",
) -> MetricsReport:
    """Aggregate judge responses the way eval_lau aggregates simulator scores.

    Args:
        response_path: Response file with lines {group_id, p_purchase, chosen_item}.
        groups: The judged groups, supplying the logged purchase probabilities.
        cutoffs: Thresholds c in (0, 1].
        method: Row label of the judged ranker.

    Returns:
        MetricsReport: eval_lau rows over the groups that received a response; notes count
        skipped groups, duplicate responses and responses for unknown groups.

    Notes:
        1. A later response for the same group replaces an earlier one.
        2. A malformed line raises SchemaError naming its line number.

    """
    _msg = f"judge_exchange_import starting for {response_path}"
    log.debug(_msg)

    check_cutoffs(cutoffs)
    source = Path(response_path)
    known = {g.group_id for g in groups}
    responses: dict[int, float] = {}
    duplicates = unknown = 0
    for number, record in _records(source, RESPONSE_SCHEMA):
        try:
            group_id = int(record["group_id"])
            probability = float(record["p_purchase"])
        except (KeyError, TypeError, ValueError) as e:
            _msg = f"{source}: line {number} is not a valid response: {e}"
            raise SchemaError(_msg) from e
        if not 0.0 <= probability <= 1.0:
            _msg = f"{source}: line {number} has p_purchase {probability} outside [0, 1]"
            raise SchemaError(_msg)
        if group_id not in known:
            unknown += 1
            continue
        if group_id in responses:
            duplicates += 1
        responses[group_id] = probability

    answered = [g for g in groups if g.group_id in responses]
    skipped = len(groups) - len(answered)
    if duplicates or skipped or unknown:
        _msg = f"{source}: {duplicates} duplicate responses, {skipped} groups skipped, {unknown} unknown groups"
        log.warning(_msg)
    if not answered:
        _msg = f"{source}: no response matches any group"
        raise SchemaError(_msg)

    report = MetricsReport(notes={"skipped": skipped, "duplicates": duplicates, "unknown": unknown})
    purchase = np.array([responses[g.group_id] for g in answered])
    logged = np.array([g.purchase_prob for g in answered])
    lau_rows(method, purchase, logged, cutoffs, report)

    _msg = f"judge_exchange_import returning {len(answered)} judged groups"
    log.debug(_msg)
    return report
