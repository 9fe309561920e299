"""Dense tensors and the append-only tape used for reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    # np.ascontiguousarray would promote 0-d scalars to shape (1,)
    if dtype is not None:
        return np.require(np.asarray(data, dtype=dtype), requirements="C")
    arr = np.asarray(data)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return np.require(arr, requirements="C")


class Tensor:
    """An n-dimensional float array with an optional gradient slot.

    Storage is a C-contiguous numpy array, so ``data.ravel()`` is the row-major
    flat view and ``shape`` the explicit dimension list.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        if self.data.dtype not in FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {self.data.dtype}; use float32 or float64")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, graph: "Graph | None" = None, retain_graph: bool = False) -> None:
        backward(self, graph, retain_graph=retain_graph)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    @property
    def T(self) -> "Tensor":
        from . import ops

        return ops.transpose(self)

    def sum(self) -> "Tensor":
        from . import ops

        return ops.sum(self)

    def reshape(self, *shape) -> "Tensor":
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class Node:
    """One recorded operation: operands, result, and the rule mapping the
    result's gradient to operand gradients."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


@dataclass(eq=False)
class Graph:
    """Ordered tape of executed operations.

    Nodes are appended as operations run, so the list order is already a
    topological order and backward simply walks it in reverse.
    """

    nodes: list[Node] = field(default_factory=list)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.output._node = None
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


class _State(threading.local):
    def __init__(self):
        self.graph = Graph()
        self.enabled = True


_state = _State()


def default_graph() -> Graph:
    return _state.graph


def grad_enabled() -> bool:
    return _state.enabled


@contextlib.contextmanager
def no_grad():
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextlib.contextmanager
def use_graph(graph: Graph):
    prev = _state.graph
    _state.graph = graph
    try:
        yield graph
    finally:
        _state.graph = prev


def make_result(op: str, data: np.ndarray, inputs: Iterable[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it on the active graph
    when any operand needs a gradient."""
    inputs = tuple(inputs)
    needs = _state.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        node = Node(op, inputs, out, backward_fn)
        out._node = node
        _state.graph.record(node)
    return out


def backward(loss: Tensor, graph: Graph | None = None, retain_graph: bool = False) -> None:
    """Populate ``.grad`` on every leaf tensor that requires a gradient.

    Gradients accumulate into existing ``.grad`` arrays; call
    :func:`zero_grads` between steps to reset them.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = graph if graph is not None else _state.graph
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires a gradient")
    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        _accumulate_leaf(loss, seed)
        return
    pending: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(graph.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.is_leaf:
                _accumulate_leaf(t, gi)
            else:
                key = id(t)
                if key in pending:
                    pending[key] = pending[key] + gi
                else:
                    pending[key] = gi
    if not retain_graph:
        graph.clear()


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
