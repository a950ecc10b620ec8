"""Permutation-aware reward model g(q, {i}_L, π)."""

import logging

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape, Tensor
from permurank.errors import ContractViolationError
from permurank.models.encoder import embed_group, encode
from permurank.models.params import BoundParams, RewardParams
from permurank.sorting.softsort import SoftPermutationMatrix, inverse_orders, soft_position_embed

log = logging.getLogger(__name__)


def _check_length(bound: BoundParams, size: int) -> None:
    max_len = bound.params.max_len
    if size > max_len:
        _msg = f"list length {size} exceeds the position table ({max_len} rows)"
        raise ContractViolationError(_msg)


def hard_position_rows(bound: BoundParams, orders: np.ndarray) -> Tensor:
    """Position rows P[π] per item for hard orders.

    Args:
        bound: Reward parameters on the current tape.
        orders: Integer array (..., L); orders[..., k] is the item shown at position k.

    Returns:
        Tensor: Rows of shape (..., L, d) where row l is the embedding of item l's position.

    """
    orders = np.asarray(orders, dtype=np.int64)
    _check_length(bound, orders.shape[-1])
    return ops.take_rows(bound["pos"], inverse_orders(orders))


def soft_position_rows(bound: BoundParams, pi: SoftPermutationMatrix | Tensor) -> Tensor:
    """Position mixtures Πᵀ P for a soft (or straight-through) permutation."""
    matrix = pi.matrix if isinstance(pi, SoftPermutationMatrix) else pi
    size = matrix.shape[-1]
    _check_length(bound, size)
    table = ops.take_rows(bound["pos"], np.arange(size))
    return soft_position_embed(matrix, table)


def reward_logit(bound: BoundParams, q: ops.Operand, items: ops.Operand, pos_rows: Tensor) -> Tensor:
    """Pre-sigmoid reward vᵀ h_CLS.

    Args:
        bound: Reward parameters on the current tape.
        q: Query vectors (..., query_dim).
        items: Item rows (..., L, item_dim).
        pos_rows: Position rows (..., L, d), hard P[π] or soft Πᵀ P.

    Returns:
        Tensor: Logits of shape (...).

    Notes:
        1. Embed every item with its query and add the item's position row.
        2. Prepend the CLS token, run the set encoder and read the CLS output.
        3. Without a CLS token the output tokens are mean-pooled instead.

    """
    tokens = embed_group(q, items, bound)
    size = tokens.shape[-2]
    width = bound.encoder.width
    _check_length(bound, size)
    if pos_rows.shape[-2:] != (size, width):
        _msg = f"reward_logit: position rows {pos_rows.shape} do not match tokens {tokens.shape}"
        raise ContractViolationError(_msg)
    tokens = ops.add(tokens, pos_rows)
    lead = tokens.shape[:-2]

    if bound.encoder.use_cls:
        cls = ops.add(np.zeros((*lead, 1, width)), ops.reshape(bound["cls"], (1, width)))
        hidden = encode(ops.concat([cls, tokens], axis=-2), bound)
        mask = np.zeros(size + 1, dtype=bool)
        mask[0] = True
        pooled = ops.reshape(ops.select_rows(hidden, mask), (*lead, width))
    else:
        pooled = ops.mean(encode(tokens, bound), axis=-2)
    return ops.matmul(pooled, bound["readout"])


def reward_forward(bound: BoundParams, q: ops.Operand, items: ops.Operand, pos_rows: Tensor) -> Tensor:
    """g = sigmoid(vᵀ h_CLS), a probability in (0, 1) per group."""
    return ops.sigmoid(reward_logit(bound, q, items, pos_rows))


def predict_reward(params: RewardParams, q: np.ndarray, items: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """Evaluate g for hard orders on plain arrays with frozen parameters.

    Args:
        params: Trained reward model.
        q: Query vectors (..., query_dim).
        items: Item rows (..., L, item_dim).
        orders: Hard orders (..., L).

    Returns:
        np.ndarray: Predicted utilities of shape (...).

    """
    tape = Tape()
    bound = params.bind(tape, trainable=False)
    return reward_forward(bound, q, items, hard_position_rows(bound, orders)).numpy()
