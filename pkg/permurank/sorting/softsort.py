"""SoftSort relaxation of argsort and hard permutation helpers."""

import logging
from dataclasses import dataclass

import numpy as np

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape, Tensor
from permurank.errors import ContractViolationError, DomainError

log = logging.getLogger(__name__)

DEFAULT_TAU = 1.0


@dataclass(frozen=True)
class HardPermutation:
    """Ranking of L items: order[k] is the item shown at position k (0-based)."""

    order: tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.order) != list(range(len(self.order))):
            _msg = f"order {self.order} is not a permutation of 0..{len(self.order) - 1}"
            raise ContractViolationError(_msg)

    def __len__(self) -> int:
        return len(self.order)

    def positions(self) -> np.ndarray:
        """Inverse permutation: positions()[item] is the rank position of item."""
        return inverse_orders(np.asarray(self.order))

    def matrix(self) -> np.ndarray:
        """0/1 matrix with M[k, order[k]] = 1."""
        return permutation_matrices(np.asarray(self.order))


@dataclass(frozen=True)
class SoftPermutationMatrix:
    """Row-stochastic relaxation of a permutation matrix at temperature tau."""

    matrix: Tensor
    tau: float


def hard_orders(scores: np.ndarray) -> np.ndarray:
    """Descending argsort along the last axis; ties go to the lower item index."""
    values = np.asarray(scores, dtype=np.float64)
    return np.argsort(-values, axis=-1, kind="stable")


def hard_permutation(scores: np.ndarray) -> HardPermutation:
    """Sort items by descending score.

    Args:
        scores: Finite real vector of length L.

    Returns:
        HardPermutation: order[0] holds the highest-scoring item; equal scores keep index order.

    """
    values = np.asarray(scores, dtype=np.float64)
    if values.ndim != 1:
        _msg = f"hard_permutation expects a vector, got shape {values.shape}"
        raise ContractViolationError(_msg)
    return HardPermutation(order=tuple(int(i) for i in hard_orders(values)))


def inverse_orders(orders: np.ndarray) -> np.ndarray:
    """Invert permutations along the last axis."""
    orders = np.asarray(orders, dtype=np.int64)
    positions = np.empty_like(orders)
    ranks = np.broadcast_to(np.arange(orders.shape[-1]), orders.shape)
    np.put_along_axis(positions, orders, ranks, axis=-1)
    return positions


def permutation_matrices(orders: np.ndarray) -> np.ndarray:
    """One-hot matrices M[..., k, order[..., k]] = 1 for a batch of orders."""
    orders = np.asarray(orders, dtype=np.int64)
    size = orders.shape[-1]
    matrices = np.zeros((*orders.shape, size))
    np.put_along_axis(matrices, orders[..., np.newaxis], 1.0, axis=-1)
    return matrices


def _check_tau(tau: float) -> None:
    if not tau > 0.0:
        _msg = f"tau must be positive, got {tau}"
        raise DomainError(_msg)


def softsort(scores: Tensor, tau: float = DEFAULT_TAU) -> SoftPermutationMatrix:
    """Relax argsort into a row-stochastic matrix.

    Args:
        scores: Tensor of shape (..., L) with finite values.
        tau: Positive temperature; smaller values approach the hard permutation.

    Returns:
        SoftPermutationMatrix: Π of shape (..., L, L) with
        Π[k, l] = softmax_l(-|s_l - s_[k]| / tau), s_[k] the k-th largest score.

    Notes:
        1. Sort a detached copy of the scores to find which coordinate holds s_[k].
        2. Gather s_[k] from the live scores so gradients reach its source coordinate.
        3. Form pairwise differences s_l - s_[k] by broadcasting a row against a column.
        4. Apply -|.|/tau and a row softmax (max-subtracted).

    """
    _check_tau(tau)
    if scores.value.ndim < 1 or scores.shape[-1] < 1:
        _msg = f"softsort needs at least one score, got shape {scores.shape}"
        raise ContractViolationError(_msg)
    size = scores.shape[-1]
    lead = scores.shape[:-1]
    order = hard_orders(scores.value)
    sorted_scores = ops.take_along(scores, order)
    row = ops.reshape(scores, (*lead, 1, size))
    column = ops.reshape(sorted_scores, (*lead, size, 1))
    distance = ops.abs(ops.sub(row, column))
    matrix = ops.softmax(ops.scale(distance, -1.0 / tau), axis=-1)
    return SoftPermutationMatrix(matrix=matrix, tau=tau)


def ste_combine(scores: Tensor, tau: float = DEFAULT_TAU) -> SoftPermutationMatrix:
    """Hard permutation matrix on the forward pass, SoftSort gradient on the reverse pass."""
    soft = softsort(scores, tau)
    hard = permutation_matrices(hard_orders(scores.value))
    return SoftPermutationMatrix(matrix=ops.straight_through(soft.matrix, hard), tau=tau)


def soft_position_embed(pi_soft: SoftPermutationMatrix | Tensor, table: Tensor) -> Tensor:
    """Mix position vectors per item: row l of the result is sum_k Π[k, l] * p_k.

    Args:
        pi_soft: Π of shape (..., L, L), soft or hard.
        table: Position table with exactly L rows, shape (L, d).

    Returns:
        Tensor: Πᵀ · P of shape (..., L, d).

    """
    matrix = pi_soft.matrix if isinstance(pi_soft, SoftPermutationMatrix) else pi_soft
    if matrix.value.ndim < 2 or matrix.shape[-1] != matrix.shape[-2]:
        _msg = f"soft_position_embed: Π must be square, got shape {matrix.shape}"
        raise ContractViolationError(_msg)
    if table.value.ndim != 2 or table.shape[0] != matrix.shape[-1]:
        _msg = f"soft_position_embed: table {table.shape} does not have {matrix.shape[-1]} rows"
        raise ContractViolationError(_msg)
    return ops.matmul(ops.transpose(matrix), table)


def softsort_values(scores: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Evaluate SoftSort on plain arrays, without keeping a tape."""
    tape = Tape()
    return softsort(tape.constant(scores), tau).matrix.numpy()
