"""Finite-difference verification of reverse-mode gradients."""

import logging
from collections.abc import Callable, Sequence

import numpy as np
from pydantic import BaseModel

from permurank.autodiff.tape import Tape, Tensor

log = logging.getLogger(__name__)

ScalarFunction = Callable[[Tape, list[Tensor]], Tensor]
GradientFunction = Callable[[list[np.ndarray]], list[np.ndarray]]

DEFAULT_STEP = 1e-5
KINK_MARGIN = 1e-3


class GradCheckResult(BaseModel):
    """Outcome of one gradient check."""

    max_rel_error: float
    """Largest |analytic - numeric| / max(1, |analytic|) over checked coordinates (inf on NaN)."""

    worst_input: int = -1
    """Index of the input holding the worst coordinate."""

    worst_coordinate: int = -1
    """Flat index of the worst coordinate inside that input."""

    nan_input: int | None = None
    """Input index of the first NaN seen on either side, if any."""

    nan_coordinate: int | None = None
    """Flat coordinate of the first NaN seen on either side, if any."""

    checked: int = 0
    """Number of coordinates compared."""

    skipped: int = 0
    """Number of coordinates skipped as too close to a kink."""

    def passed(self, tolerance: float = 1e-4) -> bool:
        """Return True when no NaN was seen and the error is below tolerance."""
        return self.nan_coordinate is None and self.max_rel_error < tolerance


def evaluate(f: ScalarFunction, inputs: Sequence[np.ndarray]) -> float:
    """Evaluate a taped scalar function on plain arrays."""
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    return f(tape, leaves).item()


def analytic_gradient(f: ScalarFunction, inputs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Return the reverse-mode gradient of f with respect to each input."""
    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    grads = tape.backward(f(tape, leaves))
    return [np.asarray(grads[leaf], dtype=np.float64) for leaf in leaves]


def numeric_gradient(
    f: ScalarFunction,
    inputs: Sequence[np.ndarray],
    h: float = DEFAULT_STEP,
) -> list[np.ndarray]:
    """Central-difference gradient of f with respect to each input."""
    base = [np.array(x, dtype=np.float64) for x in inputs]
    result = []
    for x in base:
        grad = np.zeros_like(x)
        flat = x.reshape(-1)
        for coordinate in range(flat.size):
            saved = flat[coordinate]
            flat[coordinate] = saved + h
            plus = evaluate(f, base)
            flat[coordinate] = saved - h
            minus = evaluate(f, base)
            flat[coordinate] = saved
            grad.reshape(-1)[coordinate] = (plus - minus) / (2.0 * h)
        result.append(grad)
    return result


def grad_check(
    f: ScalarFunction,
    inputs: Sequence[np.ndarray],
    h: float = DEFAULT_STEP,
    *,
    skip: Sequence[np.ndarray | None] | None = None,
    gradient_fn: GradientFunction | None = None,
) -> GradCheckResult:
    """Compare an analytic gradient against central differences.

    Args:
        f: Builds a scalar tensor from leaf tensors on the given tape.
        inputs: Point at which to check, one array per leaf.
        h: Finite-difference step.
        skip: Optional boolean masks, one per input, marking coordinates near a kink.
        gradient_fn: Optional hand-written gradient to check instead of the tape's reverse sweep.

    Returns:
        GradCheckResult: Max relative error and bookkeeping about the comparison.

    Notes:
        1. Compute the analytic gradient (tape backward, or gradient_fn when given).
        2. Compute the central-difference gradient coordinate by coordinate.
        3. For every coordinate not masked by skip, compute |a - n| / max(1, |a|).
        4. A NaN on either side marks the result as failed and records its coordinate.

    """
    _msg = "grad_check starting"
    log.debug(_msg)

    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    analytic = gradient_fn(arrays) if gradient_fn is not None else analytic_gradient(f, arrays)
    numeric = numeric_gradient(f, arrays, h)

    result = GradCheckResult(max_rel_error=0.0)
    for position, (a_grad, n_grad) in enumerate(zip(analytic, numeric, strict=True)):
        a_flat = np.asarray(a_grad, dtype=np.float64).reshape(-1)
        n_flat = n_grad.reshape(-1)
        mask = None
        if skip is not None and skip[position] is not None:
            mask = np.asarray(skip[position], dtype=bool).reshape(-1)
        for coordinate in range(n_flat.size):
            if mask is not None and mask[coordinate]:
                result.skipped += 1
                continue
            a_val, n_val = a_flat[coordinate], n_flat[coordinate]
            result.checked += 1
            if np.isnan(a_val) or np.isnan(n_val):
                if result.nan_coordinate is None:
                    result.nan_input = position
                    result.nan_coordinate = coordinate
                result.max_rel_error = float("inf")
                continue
            error = float(abs(a_val - n_val) / max(1.0, abs(a_val)))
            if error > result.max_rel_error:
                result.max_rel_error = error
                result.worst_input = position
                result.worst_coordinate = coordinate

    _msg = f"grad_check returning max_rel_error={result.max_rel_error:.3e}"
    log.debug(_msg)
    return result


def kink_mask(x: np.ndarray, margin: float = KINK_MARGIN) -> np.ndarray:
    """Mark coordinates within `margin` of zero, where |x| has a kink."""
    return np.abs(np.asarray(x)) < margin
