"""Matrices, parameters and the computation tape.

Every value is a 2-D float64 array. Scalars are 1 x 1. Operations record
themselves on the tape that is active in the current context (see
:class:`Tape`); with no active tape they only compute values, which is how
evaluation-mode forwards run.
"""
from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

from coattn.errors import ContractError, DimensionError

_active: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("coattn_tape", default=None)


def as_matrix(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Tensor:
    """A matrix value that may take part in gradient computation."""

    __slots__ = ("value", "requires_grad", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        self.value = as_matrix(value)
        self.requires_grad = requires_grad

    @classmethod
    def _raw(cls, value: np.ndarray, requires_grad: bool) -> "Tensor":
        # Trusted constructor for op outputs that are already contiguous float64.
        t = object.__new__(cls)
        t.value = value
        t.requires_grad = requires_grad
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """A named learnable matrix with an accumulated gradient."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded here::

        with Tape() as tape:
            loss = model_loss(...)
        tape.backward(loss)
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc):
        _active.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.records)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.records.append(_Record(output, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def current_tape() -> Tape | None:
    return _active.get()


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(.) through ``tape`` in reverse recording order.

    Gradients are added to ``Parameter.grad``; call ``zero_grad`` between
    steps to start from zero.
    """
    if loss.value.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    # Leaves left in the dict are Parameters (or the loss itself if it is one).
    for rec in tape.records:
        for t in rec.inputs:
            if isinstance(t, Parameter):
                g = grads.pop(id(t), None)
                if g is not None:
                    t.grad = t.grad + g
    if isinstance(loss, Parameter) and id(loss) in grads:
        loss.grad = loss.grad + grads.pop(id(loss))
