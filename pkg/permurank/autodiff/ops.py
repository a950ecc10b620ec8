"""Differentiable primitives over float64 tensors.

Every primitive takes tensors from one tape and records its forward value
together with a vector-Jacobian rule. Plain arrays and Python floats are
accepted wherever a second operand is expected and enter the tape as
constants. Broadcasting follows numpy; cotangents are summed back to each
input's shape.
"""

import logging
from collections.abc import Sequence

import numpy as np

from permurank.autodiff.tape import Tape, Tensor
from permurank.errors import ContractViolationError, DomainError

log = logging.getLogger(__name__)

Operand = Tensor | np.ndarray | float

LAYER_NORM_EPS = 1e-5


def _tape_of(*operands: Operand) -> Tape:
    for operand in operands:
        if isinstance(operand, Tensor):
            return operand.tape
    _msg = "at least one operand must be a Tensor"
    raise ContractViolationError(_msg)


def lift(tape: Tape, operand: Operand) -> Tensor:
    """Return a tensor unchanged, or place a plain array on the tape as a constant."""
    if isinstance(operand, Tensor):
        return operand
    return tape.constant(operand)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast cotangent back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        _msg = f"{op}: shapes {a.shape} and {b.shape} do not broadcast"
        raise ContractViolationError(_msg) from e


def add(a: Operand, b: Operand) -> Tensor:
    """Elementwise a + b."""
    tape = _tape_of(a, b)
    ta, tb = lift(tape, a), lift(tape, b)
    _broadcast_shape("add", ta.value, tb.value)
    shape_a, shape_b = ta.shape, tb.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, shape_a), _unbroadcast(g, shape_b)

    return tape.record("add", [ta, tb], ta.value + tb.value, vjp)


def sub(a: Operand, b: Operand) -> Tensor:
    """Elementwise a - b."""
    tape = _tape_of(a, b)
    ta, tb = lift(tape, a), lift(tape, b)
    _broadcast_shape("sub", ta.value, tb.value)
    shape_a, shape_b = ta.shape, tb.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, shape_a), _unbroadcast(-g, shape_b)

    return tape.record("sub", [ta, tb], ta.value - tb.value, vjp)


def mul(a: Operand, b: Operand) -> Tensor:
    """Elementwise a * b."""
    tape = _tape_of(a, b)
    ta, tb = lift(tape, a), lift(tape, b)
    _broadcast_shape("mul", ta.value, tb.value)
    va, vb = ta.value, tb.value

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)

    return tape.record("mul", [ta, tb], va * vb, vjp)


def neg(a: Tensor) -> Tensor:
    """Elementwise -a."""
    return scale(a, -1.0)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a Python scalar."""
    factor = float(factor)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * factor,)

    return a.tape.record("scale", [a], a.value * factor, vjp)


def matmul(a: Operand, b: Operand) -> Tensor:
    """Matrix product with numpy semantics, including batch broadcasting and 1-D operands.

    Args:
        a: Left operand, at least 1-D.
        b: Right operand, at least 1-D.

    Returns:
        Tensor: np.matmul(a, b).

    Notes:
        1. Promote 1-D operands to matrices the way np.matmul does.
        2. Check that the contracted dimensions agree; raise ContractViolationError otherwise.
        3. Reverse rule: dA = G Bᵀ and dB = Aᵀ G, summed over broadcast batch axes.

    """
    tape = _tape_of(a, b)
    ta, tb = lift(tape, a), lift(tape, b)
    va, vb = ta.value, tb.value
    if va.ndim == 0 or vb.ndim == 0:
        _msg = "matmul: scalar operands are not allowed, use scale or mul"
        raise ContractViolationError(_msg)
    a2 = va if va.ndim >= 2 else va[np.newaxis, :]
    b2 = vb if vb.ndim >= 2 else vb[:, np.newaxis]
    if a2.shape[-1] != b2.shape[-2]:
        _msg = f"matmul: shapes {va.shape} and {vb.shape} are not aligned"
        raise ContractViolationError(_msg)
    try:
        out2 = np.matmul(a2, b2)
    except ValueError as e:
        _msg = f"matmul: batch shapes {va.shape} and {vb.shape} do not broadcast"
        raise ContractViolationError(_msg) from e
    out = np.matmul(va, vb)

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g2 = g.reshape(out2.shape)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        ga = _unbroadcast(ga, a2.shape).reshape(va.shape)
        gb = _unbroadcast(gb, b2.shape).reshape(vb.shape)
        return ga, gb

    return tape.record("matmul", [ta, tb], out, vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along an axis (the last axis by default)."""
    if not tensors:
        _msg = "concat: needs at least one tensor"
        raise ContractViolationError(_msg)
    tape = tensors[0].tape
    values = [t.value for t in tensors]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as e:
        shapes = [v.shape for v in values]
        _msg = f"concat: incompatible shapes {shapes}"
        raise ContractViolationError(_msg) from e
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, bounds, axis=axis)

    return tape.record("concat", list(tensors), out, vjp)


def sum(a: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Sum over one axis or over everything."""
    shape = a.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.record("sum", [a], np.sum(a.value, axis=axis, keepdims=keepdims), vjp)


def mean(a: Tensor, axis: int | None = None, *, keepdims: bool = False) -> Tensor:
    """Mean over one axis or over everything."""
    count = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a: Tensor) -> Tensor:
    """Elementwise exponential."""
    out = np.exp(a.value)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * out,)

    return a.tape.record("exp", [a], out, vjp)


def log(a: Tensor) -> Tensor:
    """Elementwise natural logarithm of a strictly positive tensor."""
    if np.any(a.value <= 0.0):
        _msg = "log: input contains non-positive values"
        raise DomainError(_msg)
    x = a.value

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g / x,)

    return a.tape.record("log", [a], np.log(x), vjp)


def abs(a: Tensor) -> Tensor:  # noqa: A001
    """Elementwise absolute value; the derivative at 0 is taken as 0."""
    sign = np.sign(a.value)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * sign,)

    return a.tape.record("abs", [a], np.abs(a.value), vjp)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    ex = np.exp(x[~positive])
    out[~positive] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, evaluated without overflow for large |x|."""
    out = _stable_sigmoid(np.asarray(a.value, dtype=np.float64).reshape(-1)).reshape(a.shape)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * out * (1.0 - out),)

    return a.tape.record("sigmoid", [a], out, vjp)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)) computed stably; the derivative is sigmoid(x)."""
    x = a.value
    out = np.logaddexp(0.0, x)
    slope = _stable_sigmoid(np.asarray(x, dtype=np.float64).reshape(-1)).reshape(x.shape)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * slope,)

    return a.tape.record("softplus", [a], out, vjp)


def tanh(a: Tensor) -> Tensor:
    """Elementwise hyperbolic tangent."""
    out = np.tanh(a.value)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g * (1.0 - out * out),)

    return a.tape.record("tanh", [a], out, vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along an axis; the row maximum is subtracted before exponentiating."""
    shifted = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner),)

    return a.tape.record("softmax", [a], out, vjp)


def layer_norm(a: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine part).

    Args:
        a: Input tensor; statistics are taken over its last axis.
        eps: Constant added to the variance inside the square root.

    Returns:
        Tensor: (a - mean) / sqrt(var + eps).

    """
    x = a.value
    mu = np.mean(x, axis=-1, keepdims=True)
    centered = x - mu
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        g_mean = np.mean(g, axis=-1, keepdims=True)
        gx_mean = np.mean(g * xhat, axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - xhat * gx_mean),)

    return a.tape.record("layer_norm", [a], xhat, vjp)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (np.swapaxes(g, -1, -2),)

    return a.tape.record("transpose", [a], np.swapaxes(a.value, -1, -2), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reshape without changing the row-major order of values."""
    original = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as e:
        _msg = f"reshape: cannot reshape {original} into {shape}"
        raise ContractViolationError(_msg) from e

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g.reshape(original),)

    return a.tape.record("reshape", [a], out, vjp)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table: out[..., :] = a[indices[...], :]."""
    if a.value.ndim != 2:
        _msg = f"take_rows: expected a 2-D table, got shape {a.shape}"
        raise ContractViolationError(_msg)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        _msg = f"take_rows: index out of range for a table with {a.shape[0]} rows"
        raise ContractViolationError(_msg)
    shape = a.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape)
        np.add.at(grad, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (grad,)

    return a.tape.record("take_rows", [a], a.value[idx], vjp)


def select_rows(a: Tensor, mask: np.ndarray) -> Tensor:
    """Keep the rows (second to last axis) where the boolean mask is true."""
    keep = np.asarray(mask, dtype=bool)
    if a.value.ndim < 2 or keep.shape != (a.shape[-2],):
        _msg = f"select_rows: mask of shape {keep.shape} does not match rows of {a.shape}"
        raise ContractViolationError(_msg)
    shape = a.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape)
        grad[..., keep, :] = g
        return (grad,)

    return a.tape.record("select_rows", [a], a.value[..., keep, :], vjp)


def take_along(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather along the last axis: out[..., j] = a[..., indices[..., j]]."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != a.value.ndim or idx.shape[:-1] != a.shape[:-1]:
        _msg = f"take_along: indices {idx.shape} do not match tensor {a.shape}"
        raise ContractViolationError(_msg)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[-1]):
        _msg = "take_along: index out of range"
        raise ContractViolationError(_msg)
    shape = a.shape

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros(shape)
        grid = list(np.indices(idx.shape, sparse=True))
        grid[-1] = idx
        np.add.at(grad, tuple(grid), g)
        return (grad,)

    return a.tape.record("take_along", [a], np.take_along_axis(a.value, idx, axis=-1), vjp)


def detach(a: Tensor) -> Tensor:
    """Copy the value onto the tape as a constant; no gradient flows back."""
    return a.tape.constant(a.value)


def straight_through(soft: Tensor, forward_value: np.ndarray) -> Tensor:
    """Forward `forward_value` exactly while passing cotangents straight to `soft`.

    Equivalent to forward_value - detach(soft) + soft, without the rounding
    that the explicit sum would introduce in the forward value.
    """
    hard = np.asarray(forward_value, dtype=np.float64)
    if hard.shape != soft.shape:
        _msg = f"straight_through: forward value {hard.shape} does not match {soft.shape}"
        raise ContractViolationError(_msg)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (g,)

    return soft.tape.record("straight_through", [soft], hard.copy(), vjp)


def div(a: Operand, b: Operand) -> Tensor:
    """Elementwise a / b for a nonzero denominator."""
    tape = _tape_of(a, b)
    ta, tb = lift(tape, a), lift(tape, b)
    _broadcast_shape("div", ta.value, tb.value)
    if np.any(tb.value == 0.0):
        _msg = "div: denominator contains zeros"
        raise DomainError(_msg)
    va, vb = ta.value, tb.value
    out = va / vb

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g / vb, va.shape), _unbroadcast(-g * out / vb, vb.shape)

    return tape.record("div", [ta, tb], out, vjp)


def logsumexp(a: Tensor, axis: int = -1, *, keepdims: bool = False) -> Tensor:
    """log(sum(exp(a))) along an axis, shifted by a detached maximum."""
    peak = np.max(a.value, axis=axis, keepdims=True)
    shifted = exp(sub(a, peak))
    out = add(log(sum(shifted, axis=axis, keepdims=True)), peak)
    if keepdims:
        return out
    return reshape(out, np.squeeze(out.value, axis=axis).shape)
