"""Synthetic world generator: latent relevance, a noisy logging policy and logged feedback."""

import hashlib
import logging

import numpy as np

from permurank.datagen.models import Dataset, QueryGroup, SyntheticWorldConfig
from permurank.errors import ContractViolationError
from permurank.monitoring.metrics import global_metrics, timing_decorator
from permurank.oracles.behavioral import BehavioralUserConfig, purchase_breakdown
from permurank.oracles.ips import IpsOracle, sample_clicks, sample_label, u_ips_orders
from permurank.sorting.softsort import hard_orders

log = logging.getLogger(__name__)

MIN_GROUPS = 10


def group_rng(seed: int, stream_id: int) -> np.random.Generator:
    """Independent generator for one group, keyed by the global seed and the group's id."""
    return np.random.default_rng([seed, stream_id])


def relevance_matrix(cfg: SyntheticWorldConfig) -> np.ndarray:
    """Shared bilinear form W; entries have std 1/sqrt(rows * cols) so qᵀ W i has unit variance."""
    rng = np.random.default_rng(cfg.seed)
    rows, cols = cfg.features_dim, cfg.item_dim
    return rng.normal(0.0, 1.0 / np.sqrt(rows * cols), size=(rows, cols))


def _split_key(seed: int, query_id: int) -> bytes:
    return hashlib.blake2b(f"{seed}:{query_id}".encode(), digest_size=16).digest()


def split_queries(seed: int, query_ids: list[int]) -> dict[str, set[int]]:
    """Assign queries to train/val/test in exact 80/10/10 proportions by a hash of the query id."""
    ordered = sorted(query_ids, key=lambda qid: _split_key(seed, qid))
    n_train = len(ordered) * 8 // 10
    n_val = len(ordered) // 10
    return {
        "train": set(ordered[:n_train]),
        "val": set(ordered[n_train : n_train + n_val]),
        "test": set(ordered[n_train + n_val :]),
    }


def _label(cfg: SyntheticWorldConfig, utility: float, purchase: float, rng: np.random.Generator) -> float:
    if cfg.label_mode == "binary_click":
        return float(sample_label(utility, rng))
    if cfg.label_mode == "soft_ips":
        return utility
    return purchase


@timing_decorator(global_metrics)
def generate(
    cfg: SyntheticWorldConfig,
    n_groups: int,
    oracle: IpsOracle | None = None,
    behavior: BehavioralUserConfig | None = None,
) -> Dataset:
    """Generate a dataset of logged query groups.

    Args:
        cfg: World configuration.
        n_groups: Number of logged impressions; at least 10.
        oracle: Click model for U_IPS labels and click logs (default examination table).
        behavior: Shopper used for purchase probabilities (default biases).

    Returns:
        Dataset: Groups split 80/10/10 by query.

    Notes:
        1. Draw the shared relevance form W from the world seed.
        2. For every query draw q, items, brands and colors from that query's own generator,
           then R = scale * xᵀ W i + offset + noise.
        3. For every logged impression sort by R plus logging noise, then record U_IPS,
           the purchase probability, per-item clicks and the label chosen by label_mode.
        4. Impressions of the same query share a query_id and land in the same split.

    """
    _msg = f"generate starting with {n_groups} groups, seed {cfg.seed}"
    log.debug(_msg)

    if n_groups < MIN_GROUPS:
        _msg = f"n_groups must be at least {MIN_GROUPS}, got {n_groups}"
        raise ContractViolationError(_msg)
    oracle = oracle or IpsOracle()
    behavior = behavior or BehavioralUserConfig()
    oracle.covers(cfg.list_size)
    behavior.covers(cfg.list_size)

    weights = relevance_matrix(cfg)
    n_queries = -(-n_groups // cfg.perms_per_group)
    groups: list[QueryGroup] = []
    for query_id in range(n_queries):
        rng = group_rng(cfg.seed, query_id)
        q = rng.normal(size=cfg.query_dim)
        context = rng.normal(size=cfg.context_dim)
        items = rng.normal(size=(cfg.list_size, cfg.item_dim))
        brands = rng.integers(0, cfg.n_brands, size=cfg.list_size)
        colors = rng.integers(0, cfg.n_colors, size=cfg.list_size)
        bilinear = items @ (np.concatenate([q, context]) @ weights)
        rel_logits = (
            cfg.relevance_scale * bilinear
            + cfg.relevance_offset
            + cfg.relevance_noise * rng.normal(size=cfg.list_size)
        )
        relevance = 1.0 / (1.0 + np.exp(-rel_logits))

        for _ in range(min(cfg.perms_per_group, n_groups - len(groups))):
            order = hard_orders(rel_logits + cfg.logging_noise * rng.normal(size=cfg.list_size))
            utility = float(u_ips_orders(oracle, rel_logits, order))
            purchase = purchase_breakdown(behavior, relevance, brands, colors, order).probability
            clicks = sample_clicks(oracle, rel_logits, order, rng)
            groups.append(
                QueryGroup(
                    group_id=len(groups),
                    query_id=query_id,
                    q=q,
                    context=context,
                    items=items,
                    brands=brands.astype(np.int64),
                    colors=colors.astype(np.int64),
                    rel_logits=rel_logits,
                    logged_order=order.astype(np.int64),
                    label=_label(cfg, utility, purchase, rng),
                    purchase_prob=purchase,
                    clicks=clicks,
                )
            )

    assignment = split_queries(cfg.seed, list(range(n_queries)))
    dataset = Dataset(
        world=cfg,
        train=[g for g in groups if g.query_id in assignment["train"]],
        val=[g for g in groups if g.query_id in assignment["val"]],
        test=[g for g in groups if g.query_id in assignment["test"]],
    )

    _msg = (
        f"generate returning {len(dataset.train)}/{len(dataset.val)}/{len(dataset.test)} "
        f"train/val/test groups, mean label {np.mean([g.label for g in groups]):.4f}"
    )
    log.info(_msg)
    return dataset
