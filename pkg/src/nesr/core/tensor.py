"""Tensor with tape-recorded reverse-mode differentiation."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from nesr.errors import DimensionError, UsageError

ArrayLike = "np.ndarray | float | int | Sequence"


@dataclass
class Node:
    """One recorded operation: inputs, output and the vector-Jacobian rule."""

    inputs: tuple
    output: "Tensor"
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    name: str = ""


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, so the list is already a
    topological order; ``backward`` walks it in reverse.
    """

    nodes: list = field(default_factory=list)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()

    def release(self) -> None:
        """Detach recorded outputs and drop the nodes.

        Outputs and nodes reference each other, so without this a finished
        graph (and its saved activations) lives until the cyclic GC runs.
        """
        for node in self.nodes:
            node.output._node = None
            node.output._tape = None
        self.nodes.clear()


_ACTIVE: list[Tape] = []


@contextlib.contextmanager
def recording(tape: Optional[Tape] = None) -> Iterator[Tape]:
    """Record differentiable ops issued inside the block onto ``tape``."""
    tape = Tape() if tape is None else tape
    _ACTIVE.append(tape)
    try:
        yield tape
    finally:
        _ACTIVE.pop()


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


# Piecewise-linear ops report which side of their kink each element is on,
# so a finite-difference probe can tell when it stepped across one.
_BRANCH_LOGS: list[list] = []


@contextlib.contextmanager
def branch_log() -> Iterator[list]:
    log: list = []
    _BRANCH_LOGS.append(log)
    try:
        yield log
    finally:
        _BRANCH_LOGS.pop()


def note_branch(side: np.ndarray) -> None:
    if _BRANCH_LOGS:
        _BRANCH_LOGS[-1].append(np.packbits(side).tobytes())


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self._tape: Optional[Tape] = None

    # --- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # --- operator sugar (implemented in ops) ------------------------------
    def __add__(self, other):
        from nesr.core import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from nesr.core import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from nesr.core import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from nesr.core import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from nesr.core import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from nesr.core import ops
        return ops.div(other, self)

    def __neg__(self):
        from nesr.core import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from nesr.core import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from nesr.core import ops
        return ops.index(self, index)

    def sum(self, axis=None, keepdims=False):
        from nesr.core import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from nesr.core import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from nesr.core import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from nesr.core import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def abs(self):
        from nesr.core import ops
        return ops.absolute(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def unwrap(x):
    """Underlying array of a Tensor; anything else is returned unchanged."""
    return x.data if isinstance(x, Tensor) else x


def make_result(data: np.ndarray, inputs: Sequence[Tensor], vjp, name: str = "") -> Tensor:
    """Wrap ``data`` and record a node when a tape is active and any input needs grad."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(tuple(inputs), out, vjp, name)
        out._node = node
        out._tape = tape
        tape.record(node)
    return out


def backward(root: Tensor, tape: Optional[Tape] = None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every requires_grad leaf on the tape.

    Gradients add into existing ``.grad`` buffers, so several backward
    passes over separate tapes accumulate (used for micro-batching).
    """
    if root.data.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    tape = tape if tape is not None else root._tape
    if tape is None or root._node is None:
        raise UsageError("root was not produced on a recording tape")

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        for inp in node.inputs:
            if inp.requires_grad and inp._node is None:
                leaves[id(inp)] = inp
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        input_grads = node.vjp(g)
        for inp, gi in zip(node.inputs, input_grads):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise DimensionError(
                    f"{node.name}: gradient shape {gi.shape} does not match input {inp.shape}"
                )
            if inp._node is None:
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=inp.dtype, copy=True)
                else:
                    inp.grad += gi
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
    for leaf in leaves.values():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
