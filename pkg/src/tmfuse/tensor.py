"""A tape-recorded tensor with just enough reverse-mode autodiff for the model.

Values are numpy arrays whose last two axes are ``(channels, frames)``; any
leading axes are batch/lane axes and every op broadcasts over them. Outputs
are frozen (``writeable=False``) so a recorded graph cannot be mutated after
the fact.

Recording is explicit::

    with Tape() as tape:
        y = ops.pointwise_conv(x, params)
        loss = ops.sum_all(y)
    grads = backward(tape, loss)
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._backend import default_dtype


class ShapeError(ValueError):
    """Operand shapes do not line up."""


class ConfigError(ValueError):
    """An operation was configured with invalid hyper-parameters."""


class UsageError(RuntimeError):
    """An API was called in a state it does not support."""


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Immutable array value that may participate in gradient recording."""

    __slots__ = ("data", "requires_grad", "name", "grad")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or _dtype_of(data), copy=True)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        t.name = None
        t.grad = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"


def _dtype_of(data):
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data.dtype
    return default_dtype()


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class Record:
    """One executed op: how to recompute it and how to pull gradients back."""

    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    forward: Callable[..., np.ndarray]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered log of ops executed while the tape is active.

    A tape is single-writer: record on one thread, then call :func:`backward`.
    """

    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded op from its recorded inputs."""
        return [rec.forward(*(t.data for t in rec.inputs)) for rec in self.records]


def record(name: str, inputs: Sequence[Tensor], out: np.ndarray, forward, vjp) -> Tensor:
    """Wrap ``out`` and log it on the active tape if any input needs gradients."""
    needs = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    result = Tensor._wrap(out, needs and tape is not None)
    if needs and tape is not None:
        tape.records.append(Record(name, tuple(inputs), result, forward, vjp))
    return result


def backward(tape: Tape, loss: Tensor, loss_grad=1.0) -> dict[int, np.ndarray]:
    """Reverse-accumulate gradients through ``tape`` starting from scalar ``loss``.

    Overwrites ``.grad`` on every leaf tensor that requires gradients and
    returns a map from ``id(tensor)`` to its gradient.
    """
    if not tape.records or tape.records[-1].output is not loss:
        raise UsageError("tape does not end with the given loss")
    if loss.data.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.full(loss.shape, loss_grad, dtype=loss.dtype)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                gi = _unbroadcast(gi, t.shape)
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                leaves[key] = t
    out = {}
    for key, g in grads.items():
        t = leaves.get(key)
        if t is None:
            continue
        t.grad = g
        out[key] = g
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g
