"""Reverse-mode autodiff core: Tensor values and the operation Tape.

Values are numpy arrays (float64 by default).  Forward ops execute eagerly
and, while a Tape is active, append one entry each: (output, inputs,
backward rule).  Eager execution order is a topological order, so the
backward pass is a single reverse sweep that visits each entry at most
once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

# Gradients returned by a backward rule, one slot per recorded input
# (None for inputs that do not require grad).
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional value with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A view of the same data, cut off from gradient recording."""
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class TapeEntry:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple, backward: BackwardRule):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of executed ops; replayed in reverse for gradients."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: Tensor, inputs: tuple, backward: BackwardRule) -> None:
        self.entries.append(TapeEntry(out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every recorded tensor.

        ``loss`` must be a scalar produced on this tape.  Entries not on a
        path to ``loss`` are skipped.
        """
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        # Mark the ancestors of the loss so unrelated entries are skipped.
        needed = {id(loss)}
        for entry in reversed(self.entries):
            if id(entry.out) in needed:
                for t in entry.inputs:
                    needed.add(id(t))
        loss.accumulate_grad(np.ones_like(loss.data))
        for entry in reversed(self.entries):
            if id(entry.out) not in needed or entry.out.grad is None:
                continue
            grads = entry.backward(entry.out.grad)
            for t, g in zip(entry.inputs, grads):
                if g is not None:
                    t.accumulate_grad(g)


_tape_stack: list[Optional[Tape]] = []


def active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


@contextlib.contextmanager
def recording(tape: Optional[Tape] = None) -> Iterator[Tape]:
    """Activate ``tape`` (a fresh one by default) for ops run in the block."""
    tape = tape if tape is not None else Tape()
    _tape_stack.append(tape)
    try:
        yield tape
    finally:
        _tape_stack.pop()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording; ops in the block build no graph."""
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()
