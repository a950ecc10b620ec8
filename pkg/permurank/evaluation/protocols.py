"""KD-Eval, LAU-Eval and logged-click evaluation of rerankers."""

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from itertools import permutations

import numpy as np

from permurank.datagen.models import QueryGroup, stack_groups
from permurank.errors import ContractViolationError, DomainError
from permurank.evaluation.metrics import MetricsReport, dcg, gain_values, ndcg_of_order, summarize
from permurank.models.params import RankerParams
from permurank.models.ranker import score_items
from permurank.monitoring.metrics import global_metrics, timing_decorator
from permurank.oracles.behavioral import BehavioralUserConfig, purchase_breakdown
from permurank.oracles.ips import IpsOracle, u_ips_orders
from permurank.sorting.softsort import hard_orders

log = logging.getLogger(__name__)

Reranker = Callable[[list[QueryGroup]], np.ndarray]
"""Maps groups to hard orders (B, L)."""

IDEAL = "Ideal"
LOGGED = "Logged"
POLICY_IN_DATA = "Policy in data"
DEFAULT_CUTOFFS = (0.8, 0.6, 0.4)
CHUNK_SIZE = 256
MAX_EXHAUSTIVE_SIZE = 8


def ranker_reranker(params: RankerParams) -> Reranker:
    """Order every group by descending ranker score.

    Args:
        params: Trained ranker.

    Returns:
        Reranker: Closure mapping groups to hard orders (B, L).

    """

    def rerank(groups: list[QueryGroup]) -> np.ndarray:
        _msg = f"ranker rerank starting for {len(groups)} groups"
        log.debug(_msg)

        batch = stack_groups(groups)
        orders = hard_orders(score_items(params, batch.q, batch.items))

        _msg = "ranker rerank returning"
        log.debug(_msg)
        return orders

    return rerank


def logged_reranker(groups: list[QueryGroup]) -> np.ndarray:
    """Keep the logged order."""
    return np.stack([g.logged_order for g in groups])


def relevance_reranker(groups: list[QueryGroup]) -> np.ndarray:
    """Sort by the latent relevance logits R, the Ideal ranking of the default click oracle."""
    return hard_orders(np.stack([g.rel_logits for g in groups]))


def random_reranker(seed: int) -> Reranker:
    """Uniformly random orders from generators keyed by seed and group id.

    Args:
        seed: Base seed; each group draws from default_rng([seed, group_id]).

    Returns:
        Reranker: Closure whose orders do not depend on chunking or group order.

    """

    def rerank(groups: list[QueryGroup]) -> np.ndarray:
        return np.stack([np.random.default_rng([seed, g.group_id]).permutation(g.size) for g in groups])

    return rerank


def exhaustive_behavioral_reranker(cfg: BehavioralUserConfig) -> Reranker:
    """Pick, per group, the order with the highest simulated purchase probability among all L! orders.

    Args:
        cfg: Behavioral user whose purchase probability is maximized.

    Returns:
        Reranker: Closure producing the argmax order of each group.

    Notes:
        1. Ties keep the first order in lexicographic enumeration.
        2. Groups longer than MAX_EXHAUSTIVE_SIZE raise ContractViolationError.

    """

    def best_order(group: QueryGroup) -> np.ndarray:
        if group.size > MAX_EXHAUSTIVE_SIZE:
            _msg = f"exhaustive search over {group.size}! orders is not supported"
            raise ContractViolationError(_msg)
        best, best_value = None, -np.inf
        for order in permutations(range(group.size)):
            value = purchase_breakdown(cfg, group.relevance, group.brands, group.colors, np.asarray(order)).probability
            if value > best_value:
                best, best_value = np.asarray(order), value
        assert best is not None
        return best

    def rerank(groups: list[QueryGroup]) -> np.ndarray:
        _msg = f"exhaustive rerank starting for {len(groups)} groups"
        log.debug(_msg)

        orders = np.stack([best_order(g) for g in groups])

        _msg = "exhaustive rerank returning"
        log.debug(_msg)
        return orders

    return rerank


def compute_orders(reranker: Reranker, groups: list[QueryGroup], workers: int = 1) -> np.ndarray:
    """Apply a reranker chunk by chunk.

    Args:
        reranker: Maps a chunk of groups to hard orders.
        groups: Groups to order.
        workers: Threads; chunks run in parallel when above 1.

    Returns:
        np.ndarray: Orders (B, L) in the order of groups.

    """
    _msg = f"compute_orders starting for {len(groups)} groups with {workers} workers"
    log.debug(_msg)

    chunks = [groups[start : start + CHUNK_SIZE] for start in range(0, len(groups), CHUNK_SIZE)]
    if workers <= 1 or len(chunks) == 1:
        orders = np.concatenate([reranker(chunk) for chunk in chunks])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            orders = np.concatenate(list(pool.map(reranker, chunks)))

    _msg = f"compute_orders returning {len(orders)} orders"
    log.debug(_msg)
    return orders


def _require(groups: list[QueryGroup]) -> None:
    if not groups:
        _msg = "evaluation needs at least one group"
        raise ContractViolationError(_msg)


@timing_decorator(global_metrics)
def eval_kd(
    reranker: Reranker,
    oracle: IpsOracle,
    groups: list[QueryGroup],
    k: int,
    method: str = "ranker",
    exponential: bool = False,
    workers: int = 1,
) -> MetricsReport:
    """KD-Eval: expected U_IPS and NDCG_rel@k of the reranked lists, with Ideal and Logged references.

    Args:
        reranker: Produces the evaluated orders.
        oracle: Click model defining U_IPS.
        groups: Evaluation groups.
        k: NDCG cutoff.
        method: Row label of the evaluated reranker.
        exponential: Use exponential NDCG gains.
        workers: Parallel chunks for the reranker.

    Returns:
        MetricsReport: Rows "U_IPS" and "NDCG_rel@k" for method, Ideal and Logged.

    Notes:
        1. Score each group with the oracle's relevance logits, which may differ from the latent R.
        2. Ideal sorts those same logits, so it attains the largest U_IPS on every group; this is asserted.
        3. Logged keeps the order the logging policy showed.

    """
    _msg = f"eval_kd starting for {method} on {len(groups)} groups"
    log.debug(_msg)

    _require(groups)
    if k < 1:
        _msg = f"k must be at least 1, got {k}"
        raise ContractViolationError(_msg)
    rel_logits = np.stack([oracle.relevance(g) for g in groups])
    gains = gain_values(rel_logits, exponential)
    report = MetricsReport()
    utilities: dict[str, np.ndarray] = {}
    order_sets = [
        (method, compute_orders(reranker, groups, workers)),
        (IDEAL, hard_orders(rel_logits)),
        (LOGGED, compute_orders(logged_reranker, groups, workers)),
    ]
    for name, orders in order_sets:
        utilities[name] = u_ips_orders(oracle, rel_logits, orders)
        report.add(summarize(name, "U_IPS", utilities[name]))
        report.add(summarize(name, f"NDCG_rel@{k}", np.atleast_1d(ndcg_of_order(gains, orders, k))))

    assert np.all(utilities[IDEAL] >= utilities[method] - 1e-12), "Ideal ranking must dominate"

    _msg = f"eval_kd returning U_IPS {report.get(method, 'U_IPS').mean:.4f} for {method}"
    log.debug(_msg)
    return report


def check_cutoffs(cutoffs: Sequence[float]) -> None:
    """Raise DomainError for a cutoff outside (0, 1]."""
    for c in cutoffs:
        if not 0.0 < c <= 1.0:
            _msg = f"cutoff {c} outside (0, 1]"
            raise DomainError(_msg)


def lau_rows(
    method: str,
    purchase: np.ndarray,
    logged: np.ndarray,
    cutoffs: Sequence[float],
    report: MetricsReport,
) -> None:
    """Add overall and cutoff-conditional E[P(pur)] rows for a method and the policy in data.

    A cutoff c keeps the groups whose logged purchase probability is below c; an empty
    selection is counted in report.notes instead of producing a row.
    """
    for name, values in ((method, purchase), (POLICY_IN_DATA, logged)):
        report.add(summarize(name, "P_purchase", values))
        for c in cutoffs:
            selected = values[logged < c]
            if selected.size:
                report.add(summarize(name, "P_purchase", selected, cutoff=c))
            elif name == method:
                key = f"empty_cutoff_{c:g}"
                report.notes[key] = report.notes.get(key, 0) + 1


@timing_decorator(global_metrics)
def eval_lau(
    reranker: Reranker,
    cfg: BehavioralUserConfig,
    groups: list[QueryGroup],
    cutoffs: Sequence[float] = DEFAULT_CUTOFFS,
    method: str = "ranker",
    workers: int = 1,
) -> MetricsReport:
    """LAU-Eval: simulated purchase probability overall and on groups the logging policy served poorly.

    Args:
        reranker: Produces the evaluated orders.
        cfg: Simulated shopper.
        groups: Groups carrying the logged purchase probability.
        cutoffs: Thresholds c in (0, 1].
        method: Row label of the evaluated reranker.
        workers: Parallel chunks for the reranker.

    Returns:
        MetricsReport: "P_purchase" rows for method and "Policy in data", overall and per cutoff.

    """
    _msg = f"eval_lau starting for {method} on {len(groups)} groups"
    log.debug(_msg)

    _require(groups)
    check_cutoffs(cutoffs)
    orders = compute_orders(reranker, groups, workers)
    purchase = np.array(
        [purchase_breakdown(cfg, g.relevance, g.brands, g.colors, order).probability for g, order in zip(groups, orders, strict=True)]
    )
    logged = np.array([g.purchase_prob for g in groups])
    report = MetricsReport()
    lau_rows(method, purchase, logged, cutoffs, report)

    _msg = f"eval_lau returning E[P(pur)] {report.get(method, 'P_purchase').mean:.4f} for {method}"
    log.debug(_msg)
    return report


@timing_decorator(global_metrics)
def dcg_clicks(
    reranker: Reranker,
    groups: list[QueryGroup],
    k: int,
    method: str = "ranker",
    workers: int = 1,
) -> MetricsReport:
    """Unnormalized DCG@k of the reranked lists with the logged clicks as gains, plus the logged order."""
    _msg = f"dcg_clicks starting for {method} on {len(groups)} groups"
    log.debug(_msg)

    _require(groups)
    if k < 1:
        _msg = f"k must be at least 1, got {k}"
        raise ContractViolationError(_msg)
    clicks = np.stack([g.clicks.astype(np.float64) for g in groups])
    report = MetricsReport()
    for name, rerank in ((method, reranker), (LOGGED, logged_reranker)):
        orders = compute_orders(rerank, groups, workers)
        shown = np.take_along_axis(clicks, orders, axis=-1)
        report.add(summarize(name, f"DCG@{k}", np.atleast_1d(dcg(shown, k))))

    _msg = "dcg_clicks returning"
    log.debug(_msg)
    return report
