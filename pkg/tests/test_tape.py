import numpy as np
import pytest

from permurank.autodiff import ops
from permurank.autodiff.tape import Tape
from permurank.errors import ContractViolationError


def test_square_gradient():
    """f(x) = x * x at x = 3 has gradient 6."""
    tape = Tape()
    x = tape.leaf(3.0)
    grads = tape.backward(ops.mul(x, x))
    assert grads[x] == pytest.approx(6.0)


def test_unused_leaf_gets_zero_gradient():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    unused = tape.leaf(np.array([5.0, 6.0, 7.0]))
    grads = tape.backward(ops.sum(ops.exp(x)))
    np.testing.assert_array_equal(grads[unused], np.zeros(3))


def test_constants_receive_no_gradient():
    tape = Tape()
    x = tape.leaf(np.array([1.0, -2.0]))
    c = tape.constant(np.array([4.0, 5.0]))
    out = ops.sum(ops.mul(x, c))
    grads = tape.backward(out)
    np.testing.assert_array_equal(grads[x], np.array([4.0, 5.0]))
    assert not c.requires_grad
    np.testing.assert_array_equal(grads[c], np.zeros(2))


def test_reused_node_accumulates():
    tape = Tape()
    x = tape.leaf(2.0)
    y = ops.add(ops.mul(x, 3.0), ops.mul(x, x))
    assert tape.backward(y)[x] == pytest.approx(3.0 + 4.0)


def test_backward_requires_scalar():
    tape = Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ContractViolationError):
        tape.backward(ops.exp(x))


def test_mixing_tapes_is_rejected():
    a = Tape().leaf(1.0)
    b = Tape().leaf(2.0)
    with pytest.raises(ContractViolationError):
        ops.add(a, b)


def test_collect_named_leaves():
    tape = Tape()
    leaves = {"w": tape.leaf(np.array([1.0, 2.0])), "b": tape.leaf(0.5)}
    out = ops.sum(ops.add(ops.mul(leaves["w"], leaves["w"]), leaves["b"]))
    grads = tape.backward(out).collect(leaves)
    np.testing.assert_allclose(grads["w"], [2.0, 4.0])
    assert grads["b"] == pytest.approx(2.0)


def test_item_needs_one_element():
    tape = Tape()
    with pytest.raises(ContractViolationError):
        tape.leaf(np.ones(2)).item()
