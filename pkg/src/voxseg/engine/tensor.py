"""Reverse-mode autodiff tensor.

A ``Tensor`` wraps a numpy array plus an optional gradient. Operations in
:mod:`voxseg.engine.ops` record a closure on each result; ``backward()``
replays them in reverse topological order. Graphs are single-shot: a second
``backward()`` without a fresh forward raises ``DetachedGraph``.
"""

import contextlib

import numpy as np

from ..errors import DetachedGraph, NotScalar

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False

    # -- construction used by ops ------------------------------------------
    @classmethod
    def _from_op(cls, data, parents, backward_fn):
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    # -- basic introspection -----------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        grad = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{grad})"

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    # -- gradients ----------------------------------------------------------
    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into every requires_grad leaf."""
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {self.data.shape}")
        if self._consumed:
            raise DetachedGraph("graph already consumed; run a fresh forward pass")
        if not self.requires_grad:
            raise DetachedGraph("no recorded graph reaches this tensor "
                                "(built under no_grad, or no parent requires grad)")
        order = self._topo_order()
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._consumed = True
            # sever links so intermediate buffers can be collected
            node._parents = ()
            node._backward = None

    def _topo_order(self):
        order = []
        seen = set()
        stack = [(self, iter(self._parents))]
        seen.add(id(self))
        while stack:
            node, it = stack[-1]
            advanced = False
            for parent in it:
                if id(parent) not in seen and parent.requires_grad:
                    seen.add(id(parent))
                    stack.append((parent, iter(parent._parents)))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()
        return order


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)
