"""Builders for hand-made query groups used across the tests."""

import numpy as np

from permurank.datagen.models import QueryGroup


def make_group(
    rel_logits: list[float] | np.ndarray,
    *,
    group_id: int = 0,
    query_id: int | None = None,
    order: list[int] | None = None,
    brands: list[int] | None = None,
    colors: list[int] | None = None,
    clicks: list[int] | None = None,
    label: float = 0.5,
    purchase_prob: float = 0.5,
    dims: tuple[int, int] = (3, 3),
    seed: int = 0,
) -> QueryGroup:
    """Group with the given relevance logits and random features."""
    rel = np.asarray(rel_logits, dtype=np.float64)
    size = rel.size
    rng = np.random.default_rng([seed, group_id])
    return QueryGroup(
        group_id=group_id,
        query_id=group_id if query_id is None else query_id,
        q=rng.normal(size=dims[0]),
        context=np.zeros(0),
        items=rng.normal(size=(size, dims[1])),
        brands=np.asarray(brands if brands is not None else range(size), dtype=np.int64),
        colors=np.asarray(colors if colors is not None else range(size), dtype=np.int64),
        rel_logits=rel,
        logged_order=np.asarray(order if order is not None else range(size), dtype=np.int64),
        label=label,
        purchase_prob=purchase_prob,
        clicks=np.asarray(clicks if clicks is not None else [0] * size, dtype=np.int64),
    )
