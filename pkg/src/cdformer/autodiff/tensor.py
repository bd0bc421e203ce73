"""Dense tensors and the recording tape for reverse-mode differentiation.

A ``Tensor`` wraps a real-valued NumPy array plus an optional gradient
buffer. Operations (see :mod:`cdformer.autodiff.ops`) execute eagerly and,
while a :class:`Tape` is active in the current thread, append themselves to
it in execution order. Because an op can only consume values that already
exist, the tape is topologically ordered by construction, and a single
reverse sweep propagates adjoints with each op visited exactly once.

Tensors are treated as immutable once produced by an op; only ``grad``
(and, for optimizer-owned parameters, ``data``) is ever mutated in place.
A tape and the tensors recorded on it belong to one thread at a time;
parallel workers each open their own tape.
"""

from __future__ import annotations

import threading

import numpy as np

from ..errors import ContractError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_state = threading.local()

# When enabled, every op output is checked for NaN/Inf and a ContractError
# is raised at the op that produced it. Off by default (it touches every
# element of every intermediate).
_debug_finite = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf detection."""
    global _debug_finite
    _debug_finite = bool(enabled)


def active_tape():
    """The tape currently recording in this thread, or None."""
    return getattr(_state, "tape", None)


class Tensor:
    """N-dimensional real array with an optional same-shaped gradient.

    ``data`` is float64 unless float32 is passed explicitly; gradient
    checks are only meaningful at 64-bit.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Same values, no recording, no gradient requirement."""
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic operators are attached by cdformer.autodiff.ops.


class Tape:
    """Execution-ordered record of ops with their backward rules.

    Use as a context manager; recording only happens while active::

        with Tape() as tape:
            loss = ...
            tape.backward(loss)

    ``backward`` may also be called after the block exits. Repeated calls
    accumulate into ``grad`` (call :func:`zero_grads` between steps).
    """

    def __init__(self):
        self._entries = []  # (output, inputs, rule); rule(g) -> per-input grads

    def __enter__(self) -> "Tape":
        if active_tape() is not None:
            raise ContractError("a tape is already active in this thread")
        _state.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.tape = None
        return False

    def __len__(self):
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Accumulate dLoss/dX into every requires_grad leaf reachable from loss."""
        if loss.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self._entries:
            raise ContractError("backward on an empty tape")
        adjoint = {id(loss): np.ones_like(loss.data)}
        holder = {id(loss): loss}
        for out, inputs, rule in reversed(self._entries):
            grad_out = adjoint.pop(id(out), None)
            if grad_out is None:
                continue  # not on a path to the loss
            holder.pop(id(out), None)
            for inp, grad_in in zip(inputs, rule(grad_out)):
                if grad_in is None:
                    continue
                key = id(inp)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + grad_in
                else:
                    adjoint[key] = grad_in
                    holder[key] = inp
        # Whatever survives the sweep was never produced by a recorded op,
        # i.e. the leaves (parameters and inputs).
        for key, grad in adjoint.items():
            leaf = holder[key]
            if not leaf.requires_grad:
                continue
            leaf.grad = grad if leaf.grad is None else leaf.grad + grad


def record(data: np.ndarray, inputs, rule, op: str = "") -> Tensor:
    """Wrap an op result, appending it to the active tape when needed.

    ``rule(grad_out)`` must return one gradient array (or None) per input,
    in order. It is only invoked for outputs that lie on a path between the
    loss and some requires_grad tensor.
    """
    if _debug_finite and not np.all(np.isfinite(data)):
        raise ContractError(f"non-finite values produced by op '{op}'")
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape._entries.append((out, tuple(inputs), rule))
        return out
    return Tensor(data)


def zero_grads(tensors) -> None:
    """Reset the gradient buffer of each tensor."""
    for t in tensors:
        t.grad = None
