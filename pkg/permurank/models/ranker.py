"""Permutation-equivariant ranker f(q, {i}_L)."""

import logging

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape, Tensor
from permurank.models.encoder import embed_group, encode
from permurank.models.params import BoundParams, RankerParams

log = logging.getLogger(__name__)


def ranker_logits(bound: BoundParams, q: ops.Operand, items: ops.Operand) -> Tensor:
    """Per-item pre-sigmoid scores wᵀ h_l.

    Args:
        bound: Ranker parameters bound to a tape.
        q: Query (and context) features, shape (..., d_q).
        items: Item features, shape (..., L, d_i).

    Returns:
        Tensor: Logits of shape (..., L).

    """
    _msg = "ranker_logits starting"
    log.debug(_msg)

    logits = ops.matmul(encode(embed_group(q, items, bound), bound), bound["readout"])

    _msg = "ranker_logits returning"
    log.debug(_msg)
    return logits


def ranker_forward(bound: BoundParams, q: ops.Operand, items: ops.Operand) -> Tensor:
    """Item scores s_l = sigmoid(wᵀ h_l) in (0, 1).

    Args:
        bound: Ranker parameters bound to a tape.
        q: Query (and context) features, shape (..., d_q).
        items: Item features, shape (..., L, d_i).

    Returns:
        Tensor: Scores of shape (..., L).

    Notes:
        1. No position information enters the encoder, so permuting the items
           permutes the scores in the same way.

    """
    return ops.sigmoid(ranker_logits(bound, q, items))


def score_items(params: RankerParams, q: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Evaluate ranker scores on plain arrays with frozen parameters.

    Args:
        params: Trained ranker.
        q: Query features, shape (B, d_q).
        items: Item features, shape (B, L, d_i).

    Returns:
        np.ndarray: Scores of shape (B, L).

    """
    _msg = f"score_items starting for items of shape {np.shape(items)}"
    log.debug(_msg)

    tape = Tape()
    scores = ranker_forward(params.bind(tape, trainable=False), q, items).numpy()

    _msg = "score_items returning"
    log.debug(_msg)
    return scores
