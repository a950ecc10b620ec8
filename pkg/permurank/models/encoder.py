"""Pre-normalization transformer encoder over an unordered token set."""

import logging

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.tape import Tensor
from permurank.errors import ContractViolationError
from permurank.models.params import BoundParams

log = logging.getLogger(__name__)


def embed_group(q: ops.Operand, items: ops.Operand, bound: BoundParams) -> Tensor:
    """Project query-item concatenations into token embeddings.

    Args:
        q: Query vectors, shape (..., query_dim).
        items: Item rows, shape (..., L, item_dim).
        bound: Parameters holding the input projection ("proj.w", "proj.b").

    Returns:
        Tensor: e of shape (..., L, d) with e_l = [q, i_l] W + b, in item order.

    """
    tape = bound["proj.w"].tape
    q_t = ops.lift(tape, q)
    items_t = ops.lift(tape, items)
    params = bound.params
    if q_t.shape[-1] != params.query_dim or items_t.shape[-1] != params.item_dim:
        _msg = (
            f"embed_group: got query dim {q_t.shape[-1]} and item dim {items_t.shape[-1]}, "
            f"expected {params.query_dim} and {params.item_dim}"
        )
        raise ContractViolationError(_msg)
    if items_t.value.ndim < 2 or q_t.shape[:-1] != items_t.shape[:-2]:
        _msg = f"embed_group: query batch {q_t.shape} does not match items {items_t.shape}"
        raise ContractViolationError(_msg)

    size = items_t.shape[-2]
    lead = q_t.shape[:-1]
    q_rows = ops.add(np.zeros((*lead, size, params.query_dim)), ops.reshape(q_t, (*lead, 1, params.query_dim)))
    joined = ops.concat([q_rows, items_t], axis=-1)
    return ops.add(ops.matmul(joined, bound["proj.w"]), bound["proj.b"])


def _affine_norm(x: Tensor, bound: BoundParams, prefix: str) -> Tensor:
    return ops.add(ops.mul(ops.layer_norm(x), bound[f"{prefix}.g"]), bound[f"{prefix}.b"])


def self_attention(x: Tensor, bound: BoundParams, prefix: str) -> Tensor:
    """Multi-head scaled dot-product attention with per-head weight slices.

    Args:
        x: Tokens of shape (..., T, d).
        bound: Parameters with "<prefix>.wq/wk/wv" of shape (H, d, dh) and "<prefix>.wo" of shape (H, dh, d).
        prefix: Name prefix of this block's attention weights.

    Returns:
        Tensor: Attention output of shape (..., T, d).

    Notes:
        1. Insert a head axis so (..., 1, T, d) broadcasts against (H, d, dh).
        2. Per head: softmax(Q Kᵀ / sqrt(dh)) V.
        3. Project every head back to d with its slice of the output matrix and sum over heads,
           which equals concatenating heads and applying one output projection.

    """
    cfg = bound.encoder
    lead = x.shape[:-2]
    tokens = x.shape[-2]
    x_heads = ops.reshape(x, (*lead, 1, tokens, cfg.width))
    q = ops.matmul(x_heads, bound[f"{prefix}.wq"])
    k = ops.matmul(x_heads, bound[f"{prefix}.wk"])
    v = ops.matmul(x_heads, bound[f"{prefix}.wv"])
    logits = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / np.sqrt(cfg.head_width))
    weights = ops.softmax(logits, axis=-1)
    per_head = ops.matmul(ops.matmul(weights, v), bound[f"{prefix}.wo"])
    return ops.sum(per_head, axis=-3)


def feed_forward(x: Tensor, bound: BoundParams, prefix: str) -> Tensor:
    """Two-layer position-wise network with a tanh hidden activation."""
    hidden = ops.tanh(ops.add(ops.matmul(x, bound[f"{prefix}.w1"]), bound[f"{prefix}.b1"]))
    return ops.add(ops.matmul(hidden, bound[f"{prefix}.w2"]), bound[f"{prefix}.b2"])


def encode(tokens: Tensor, bound: BoundParams) -> Tensor:
    """Run every encoder block and the output normalization.

    Each block is x + attn(norm(x)) followed by x + ffn(norm(x)). Attention has
    no positional term, so the encoder treats its input as an unordered set.
    """
    h = tokens
    for layer in range(bound.encoder.depth):
        prefix = f"layer{layer}"
        h = ops.add(h, self_attention(_affine_norm(h, bound, f"{prefix}.ln1"), bound, f"{prefix}.attn"))
        h = ops.add(h, feed_forward(_affine_norm(h, bound, f"{prefix}.ln2"), bound, f"{prefix}.ffn"))
    return _affine_norm(h, bound, "out_ln")
