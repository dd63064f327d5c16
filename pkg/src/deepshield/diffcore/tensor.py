"""Tensors and the reverse-mode gradient tape.

A ``Tensor`` wraps a numpy array plus an optional gradient buffer. Operations
(see :mod:`deepshield.diffcore.ops`) record themselves on the innermost active
``Tape``; ``backward`` replays the tape in reverse, accumulating adjoints into
``.grad`` of every tensor that requires one.

Two float widths are supported: float32 for training throughput, float64 for
gradient verification. An op's output dtype follows its inputs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError

FloatArray = np.ndarray

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """N-dimensional real array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: FloatArray = arr
        self.grad: FloatArray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; heavy lifting lives in ops to keep recording uniform
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)


class Tape:
    """Ordered record of applied operations, enabling one reverse sweep.

    Records are appended in execution order, so the reversed list is a valid
    reverse-topological order of the computation; ``backward`` visits each
    record exactly once.
    """

    __slots__ = ("records",)

    def __init__(self):
        # each record: (out, inputs, vjp) where vjp(g_out) -> list of
        # per-input gradient arrays (None for inputs without gradient flow)
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Mark ``out`` as produced from ``inputs``; register on the active tape."""
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = active_tape()
        if tape is not None:
            tape.records.append((out, tuple(inputs), vjp))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every recorded tensor.

    Repeated calls without grad reset add up: calling twice yields exactly
    twice the single-call gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    adjoints: dict[int, FloatArray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, vjp in reversed(tape.records):
        g_out = adjoints.get(id(out))
        if g_out is None:
            continue
        grads = vjp(g_out)
        for inp, g in zip(inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoints:
                adjoints[key] = adjoints[key] + g
            else:
                adjoints[key] = g
                holders[key] = inp
    for key, tensor in holders.items():
        if not tensor.requires_grad:
            continue
        contribution = adjoints[key]
        if tensor.grad is None:
            tensor.grad = contribution.astype(tensor.data.dtype, copy=True).reshape(tensor.shape)
        else:
            tensor.grad = tensor.grad + contribution.reshape(tensor.shape)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()
