"""Recording tape and tensor handles for reverse-mode differentiation."""

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from permurank.errors import ContractViolationError

log = logging.getLogger(__name__)

VectorJacobian = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Node:
    """One primitive application recorded on a tape."""

    op: str
    inputs: tuple[int, ...]
    vjp: VectorJacobian | None
    requires_grad: bool


class Tensor:
    """Handle to a dense float64 value living on a tape."""

    __slots__ = ("index", "tape", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray) -> None:
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the underlying value."""
        return self.value.shape

    @property
    def requires_grad(self) -> bool:
        """Whether gradients flow into this tensor."""
        return self.tape.nodes[self.index].requires_grad

    def item(self) -> float:
        """Return the value of a one-element tensor as a float."""
        if self.value.size != 1:
            _msg = f"item() needs a one-element tensor, got shape {self.value.shape}"
            raise ContractViolationError(_msg)
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a copy of the value."""
        return self.value.copy()

    def __repr__(self) -> str:
        op = self.tape.nodes[self.index].op
        return f"Tensor(op={op}, shape={self.value.shape})"


class Gradients:
    """Result of a reverse sweep: gradient lookup by tensor."""

    def __init__(self, tape: "Tape", slots: list[np.ndarray | None]) -> None:
        self._tape = tape
        self._slots = slots

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        """Return d(output)/d(tensor); zeros for tensors the output does not use."""
        if tensor.tape is not self._tape:
            _msg = "tensor belongs to a different tape"
            raise ContractViolationError(_msg)
        grad = self._slots[tensor.index]
        if grad is None:
            return np.zeros_like(tensor.value)
        return grad

    def collect(self, leaves: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
        """Return gradients for a named collection of leaves."""
        return {name: self[leaf] for name, leaf in leaves.items()}


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in evaluation order, so the record is already a
    topological order of the computation graph. A tape is built for one
    forward pass and discarded afterwards.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value: np.ndarray | float, *, requires_grad: bool = True) -> Tensor:
        """Record an input tensor.

        Args:
            value: Array or scalar; converted to a float64 array and copied.
            requires_grad: Whether the reverse sweep should produce a gradient for it.

        Returns:
            Tensor: Handle of the new leaf node.

        """
        array = np.array(value, dtype=np.float64)
        node = Node(op="leaf", inputs=(), vjp=None, requires_grad=requires_grad)
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1, array)

    def constant(self, value: np.ndarray | float) -> Tensor:
        """Record a tensor that never receives gradients."""
        return self.leaf(value, requires_grad=False)

    def record(
        self,
        op: str,
        inputs: Sequence[Tensor],
        value: np.ndarray,
        vjp: VectorJacobian,
    ) -> Tensor:
        """Append a primitive application to the tape.

        Args:
            op: Name of the primitive.
            inputs: Input tensors, all on this tape.
            value: Forward result.
            vjp: Maps the output cotangent to one cotangent per input (None for no contribution).

        Returns:
            Tensor: Handle of the output node.

        """
        for tensor in inputs:
            if tensor.tape is not self:
                _msg = f"{op}: input tensor belongs to a different tape"
                raise ContractViolationError(_msg)
        requires_grad = any(self.nodes[t.index].requires_grad for t in inputs)
        node = Node(
            op=op,
            inputs=tuple(t.index for t in inputs),
            vjp=vjp if requires_grad else None,
            requires_grad=requires_grad,
        )
        self.nodes.append(node)
        return Tensor(self, len(self.nodes) - 1, value)

    def backward(self, output: Tensor) -> Gradients:
        """Run the reverse sweep from a scalar output.

        Args:
            output: One-element tensor recorded on this tape.

        Returns:
            Gradients: Cotangent of every node; unused nodes read as zeros.

        Notes:
            1. Validate that the output is a one-element tensor on this tape.
            2. Seed the output slot with ones.
            3. Visit nodes from the output back to the first node, in reverse recording order.
            4. For each node with a cotangent and a vjp, push contributions into its input slots.
            5. Contributions are summed in a fixed order, so the result is deterministic.

        """
        if output.tape is not self:
            _msg = "backward: output belongs to a different tape"
            raise ContractViolationError(_msg)
        if output.value.size != 1:
            _msg = f"backward: output must be a scalar, got shape {output.value.shape}"
            raise ContractViolationError(_msg)

        slots: list[np.ndarray | None] = [None] * len(self.nodes)
        slots[output.index] = np.ones_like(output.value)

        for index in range(output.index, -1, -1):
            grad = slots[index]
            node = self.nodes[index]
            if grad is None or node.vjp is None:
                continue
            contributions = node.vjp(grad)
            for input_index, contribution in zip(node.inputs, contributions, strict=True):
                if contribution is None or not self.nodes[input_index].requires_grad:
                    continue
                current = slots[input_index]
                slots[input_index] = contribution if current is None else current + contribution

        return Gradients(self, slots)
