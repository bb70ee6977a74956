"""Dense float64 tensors and a reverse-mode gradient tape.

A Tensor is a thin wrapper around a row-major numpy float64 array. Gradients
are accumulated into ``Tensor.grad`` when a GradientTape is active: every
differentiable operation records a backward closure on the innermost tape,
and ``GradientTape.backward`` replays the recorded operations in reverse
execution order (which is a valid topological order of the data-flow graph).

Only tensors that actually participate in the taped computation receive a
gradient; everything else keeps ``grad = None``.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import NumericError, ShapeError

DTYPE = np.float64


class Tensor:
    """N-dimensional float64 array with optional gradient storage."""

    __slots__ = ("data", "grad", "requires_grad", "_traced")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if any(dim < 1 for dim in arr.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._traced = False  # set when produced by a taped operation

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray, own: bool = False) -> None:
        """Add ``g`` into this tensor's gradient buffer.

        ``own=True`` asserts that ``g`` is a freshly allocated array the
        caller will not touch again, letting the first accumulation adopt it
        without a defensive copy.
        """
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g if own else np.array(g, dtype=DTYPE)
        else:
            self.grad += g

    def needs_grad(self) -> bool:
        """True when a backward pass must deliver a gradient to this tensor."""
        return self.requires_grad or self._traced

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class GradientTape:
    """Ordered record of executed operations for reverse-mode replay.

    Use as a context manager around the forward computation::

        with GradientTape() as tape:
            loss = model_loss(...)
        tape.backward(loss)
    """

    _STACK: list["GradientTape"] = []

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "GradientTape":
        GradientTape._STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        GradientTape._STACK.pop()

    @staticmethod
    def active() -> Optional["GradientTape"]:
        return GradientTape._STACK[-1] if GradientTape._STACK else None

    def record(self, output: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        output._traced = True
        self._records.append((output, backward))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` for every participating tensor, starting at ``loss``."""
        if loss.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not np.isfinite(loss.data).all():
            raise NumericError("loss is not finite")
        loss.accumulate_grad(np.ones_like(loss.data))
        for output, backward in reversed(self._records):
            if output.grad is None:
                continue  # this operation's result never reached the loss
            backward(output.grad)
