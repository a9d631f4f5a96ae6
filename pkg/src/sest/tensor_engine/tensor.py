"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient. Outside a tape, evaluation is plain
numpy and records nothing.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import DetachedNode, NonFiniteValue, NotScalarLoss

_local = threading.local()


def _stack() -> list:
    s = getattr(_local, "tapes", None)
    if s is None:
        s = _local.tapes = []
    return s


def active_tape() -> Optional["Tape"]:
    s = _stack()
    return s[-1] if s else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, *, check: bool = True) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if check and not np.all(np.isfinite(arr)):
            raise NonFiniteValue("tensor data must be finite")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, check=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops
    def __add__(self, o):
        return _ops().add(self, o)

    def __radd__(self, o):
        return _ops().add(o, self)

    def __sub__(self, o):
        return _ops().sub(self, o)

    def __rsub__(self, o):
        return _ops().sub(o, self)

    def __mul__(self, o):
        return _ops().mul(self, o)

    def __rmul__(self, o):
        return _ops().mul(o, self)

    def __truediv__(self, o):
        return _ops().div(self, o)

    def __rtruediv__(self, o):
        return _ops().div(o, self)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, o):
        return _ops().matmul(self, o)

    def __getitem__(self, idx):
        return _ops().getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops().transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return _ops().sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops().mean(self, axis, keepdims)


def _ops():
    from . import ops

    return ops


class Parameter(Tensor):
    """Trainable leaf tensor carrying its AdamW state."""

    __slots__ = ("name", "m", "v", "step")

    def __init__(self, data, name: str = "") -> None:
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable operations.

    Creation order is a valid topological order, so the reverse pass simply
    walks the records backwards.
    """

    def __init__(self) -> None:
        self.records: list[tuple[Tensor, tuple[Tensor, ...], VJP]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        s = _stack()
        if not s or s[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        s.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: VJP) -> None:
        self.records.append((out, inputs, vjp))


def make_result(data: np.ndarray, inputs: tuple, vjp: VJP) -> Tensor:
    out = Tensor(data, check=False)
    tape = active_tape()
    if tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, vjp)
    return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Parameter] = ()) -> dict[int, np.ndarray]:
    """Reverse accumulation from a scalar ``loss``.

    Leaf tensors that require gradients get ``.grad`` assigned. Parameters
    passed in ``params`` are zeroed first, so ones the loss never touches end
    with an all-zero gradient. Returns a map from ``id(tensor)`` to gradient
    for every node reached.
    """
    if loss.size != 1:
        raise NotScalarLoss(f"loss has shape {loss.shape}")
    on_tape = {id(r[0]) for r in tape.records}
    if id(loss) not in on_tape and not loss.requires_grad:
        raise DetachedNode("loss was not produced on this tape")

    params = list(params)
    for p in params:
        p.zero_grad()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if id(loss) not in on_tape:
        leaves[id(loss)] = loss

    for out, inputs, vjp in reversed(tape.records):
        g = grads.get(id(out))
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                if key not in on_tape:
                    leaves[key] = inp

    for key, leaf in leaves.items():
        leaf.grad = grads[key]
    return grads
