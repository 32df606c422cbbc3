"""Dense float64 tensors with taped reverse-mode differentiation.

A Tensor wraps a numpy array. Operations (see ops.py) record themselves on
the innermost active Tape; backward() replays the tape in exact reverse
execution order, accumulating gradients additively into the ``grad`` field of
every leaf tensor that has ``requires_grad`` set. A tape can be consumed by
backward() once.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericError

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """Array value plus gradient bookkeeping. Data is always float64."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self._is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        out = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        return out

    def __repr__(self) -> str:  # pragma: no cover
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Tape:
    """Records operations so backward() can replay them in reverse order."""

    __slots__ = ("_nodes", "_consumed")

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _TAPE_STACK.pop()
        if popped is not self:  # pragma: no cover - stack discipline bug
            raise ContractError("tape stack corrupted")
        return False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._nodes.append((out, inputs, backward_fn))

    def __len__(self) -> int:
        return len(self._nodes)


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record_op(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Mark `out` as produced from `inputs`; record on the active tape if any
    input participates in differentiation. backward_fn(grad) must return a
    sequence of (input_tensor, grad_array_or_None) pairs."""
    tape = active_tape()
    if tape is None:
        return out
    if not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    out._is_leaf = False
    out._tape = tape
    tape.record(out, inputs, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into leaf.grad for all recorded leaves.

    The tape that produced `loss` is consumed; calling backward on it again
    raises. Gradients add onto whatever is already in .grad (caller zeroes).
    """
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not produced under an active tape")
    if tape._consumed:
        raise ContractError("tape already consumed by a backward pass")
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("backward called on a non-finite loss")
    tape._consumed = True

    # Gradients of intermediates flow through this dict; only leaves with
    # requires_grad land in .grad.
    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape._nodes):
        g = flows.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in backward_fn(g):
            if gi is None or not inp.requires_grad:
                continue
            if inp._is_leaf:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi
            else:
                acc = flows.get(id(inp))
                flows[id(inp)] = gi if acc is None else acc + gi


def as_tensor(x) -> Tensor:
    """Wrap plain arrays/scalars as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))
