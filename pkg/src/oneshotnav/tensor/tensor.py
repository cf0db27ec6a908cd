"""Dense float32 tensor with a recorded graph for reverse-mode differentiation."""

from contextlib import contextmanager

import numpy as np

DTYPE = np.float32
_RECORDING = [True]


@contextmanager
def no_grad():
    """Evaluate ops without recording a graph (inference)."""
    _RECORDING.append(False)
    try:
        yield
    finally:
        _RECORDING.pop()


class GraphError(RuntimeError):
    """Raised when backward is requested on a graph that cannot be differentiated."""


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class Tensor:
    """A float32 array plus the bookkeeping needed to backpropagate through it.

    Leaves created with ``requires_grad=True`` accumulate gradients in ``grad``.
    Intermediate nodes carry a backward closure that pushes the incoming
    gradient to their parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    @classmethod
    def from_op(cls, data, parents, backward):
        out = cls(data)
        if _RECORDING[-1] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

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
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def accumulate(self, g):
        if not self.requires_grad:
            return
        g = np.asarray(g, dtype=DTYPE)
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Backpropagate from this node, filling ``grad`` on every leaf that requires it."""
        if not self.requires_grad:
            raise GraphError("backward called on a tensor with no recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is None:
                continue
            g = node.grad
            if g is not None:
                node._backward(g)
            # intermediate gradients are released once propagated
            node.grad = None


def _toposort(root):
    """Iterative depth-first ordering; parents always precede children."""
    order = []
    state = {}
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise GraphError("cycle detected in computation graph")
        state[key] = 1
        stack.append((node, True))
        for parent in node._parents:
            pmark = state.get(id(parent))
            if pmark == 1:
                raise GraphError("cycle detected in computation graph")
            if pmark is None and parent.requires_grad:
                stack.append((parent, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)
