"""Tensor type and the tape that records primitive applications.

Gradients are only tracked inside an active :class:`Graph`. Outside of one,
every operation is a plain numpy computation, which is what evaluation and
data preprocessing use.
"""

import contextlib
import os
import threading
import weakref

import numpy as np

from ..errors import ContractViolation, GraphStateError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.dtype(_DTYPES[os.environ.get("ADVST_DTYPE", "float32")])
_local = threading.local()


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    """Set the numeric width used for every new tensor (float32 or float64)."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ContractViolation(f"unsupported dtype {dtype}")
    _default_dtype = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """Dense array that can participate in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        dtype = _default_dtype if dtype is None else dtype
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Node:
    # output held weakly (and nodes held weakly by the tape): a reference cycle
    # would keep every forward buffer alive until the cyclic collector runs
    __slots__ = ("kind", "inputs", "ctx", "_out", "graph", "__weakref__")

    def __init__(self, kind, inputs, ctx, out, graph):
        self.kind = kind
        self.inputs = inputs
        self.ctx = ctx
        self._out = weakref.ref(out)
        self.graph = graph

    @property
    def out(self):
        return self._out()


class Graph:
    """Ordered record of primitive applications.

    Usage::

        with Graph() as g:
            loss = ...
        grads = g.backward(loss, wrt=[w])

    A graph supports exactly one backward pass.
    """

    def __init__(self):
        self.tape = []
        self.consumed = False

    def __enter__(self):
        if self.consumed:
            raise GraphStateError("cannot re-enter a graph after backward")
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def record(self, out, kind, inputs, ctx):
        if self.consumed:
            raise GraphStateError("graph already consumed by a backward pass")
        node = Node(kind, inputs, ctx, out, self)
        out._node = node
        out.requires_grad = True
        self.tape.append(weakref.ref(node))
        return node

    def backward(self, loss, wrt=None):
        """Propagate d(loss)/d(.) through the tape.

        Returns a dict mapping each leaf tensor that requires gradients (plus
        every tensor in ``wrt``) to its gradient array. Leaves not reachable
        from ``loss`` get zeros.
        """
        if self.consumed:
            raise GraphStateError("backward called twice on the same graph")
        if loss.size != 1:
            raise ContractViolation(f"backward: loss must be scalar, got shape {loss.shape}")
        self.consumed = True
        from .primitives import PRIMITIVES

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        reached = {}
        for ref in reversed(self.tape):
            node = ref()
            out = node.out if node is not None else None
            # a collected output has no consumers left, so nothing flows through it
            g = grads.pop(id(out), None) if out is not None else None
            if g is None:
                continue
            if g.shape != out.shape:
                g = np.broadcast_to(g, out.shape)
            out.grad = g
            reached[id(out)] = g
            needs = tuple(t.requires_grad for t in node.inputs)
            in_grads = PRIMITIVES[node.kind].backward(node.ctx, g, needs)
            for inp, ig, need in zip(node.inputs, in_grads, needs):
                if not need or ig is None:
                    continue
                key = id(inp)
                if inp._node is None or inp._node.graph is not self:
                    leaves[key] = inp
                prev = grads.get(key)
                grads[key] = ig if prev is None else prev + ig
        result = {}
        for key, leaf in leaves.items():
            leaf.grad = grads[key]
            result[leaf] = leaf.grad
        if loss._node is None and loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
            result[loss] = loss.grad
        for t in wrt or ():
            if t in result:
                continue
            if id(t) in reached:
                result[t] = reached[id(t)]
            else:
                result[t] = t.grad = np.zeros_like(t.data)
        self.tape = []
        return _GradMap(result)


class _GradMap(dict):
    """Dict keyed by tensor identity."""

    def __missing__(self, key):
        raise KeyError(f"no gradient recorded for {key!r}")


def _stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_graph():
    stack = _stack()
    return stack[-1] if stack else None


def backward(loss, wrt=None):
    """Run the backward pass of the graph that produced ``loss``."""
    node = loss._node
    if node is None:
        if loss.size != 1:
            raise ContractViolation(f"backward: loss must be scalar, got shape {loss.shape}")
        return _GradMap({t: np.zeros_like(t.data) for t in (wrt or ())})
    return node.graph.backward(loss, wrt=wrt)


@contextlib.contextmanager
def no_graph():
    """Temporarily suspend gradient recording."""
    stack = _stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)
