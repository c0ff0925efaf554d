"""Reverse-mode automatic differentiation on top of numpy arrays.

Every differentiable op builds an output :class:`Tensor` holding references to
its parents and a closure mapping the output gradient to parent gradients.
:meth:`Tensor.backward` replays the recorded graph in reverse topological
order. Only leaves (tensors created with ``requires_grad=True``) keep their
gradient after a backward pass; intermediate gradients are dropped as soon as
they have been propagated.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_FLOAT_TYPES = (np.float32, np.float64)
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, optimizer updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _as_float_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype.type not in _FLOAT_TYPES:
        arr = arr.astype(np.float32)
    return arr


class DeferredGrad:
    """A weight gradient kept in factored form: the sum of ``a_k.T @ b_k``.

    A weight reused at every rollout step receives one low-rank contribution
    per use. Summing those eagerly is memory-bound; stacking the factors and
    doing a single matmul once the leaf is reached is not.
    """

    __slots__ = ("a", "b", "key", "finish")

    def __init__(self, a: np.ndarray, b: np.ndarray, key=None, finish: Callable | None = None):
        self.a, self.b = [a], [b]
        self.key = key
        self.finish = finish

    def merge(self, other: "DeferredGrad") -> bool:
        if other.key != self.key:
            return False
        self.a.extend(other.a)
        self.b.extend(other.b)
        return True

    def materialize(self) -> np.ndarray:
        a = self.a[0] if len(self.a) == 1 else np.concatenate(self.a)
        b = self.b[0] if len(self.b) == 1 else np.concatenate(self.b)
        r = a.T @ b
        return r if self.finish is None else self.finish(self.key, r)


def _accumulate(cur, new, owned: bool):
    """Add two gradient contributions; returns (sum, sum_is_a_private_buffer)."""
    if isinstance(cur, DeferredGrad) and isinstance(new, DeferredGrad) and cur.merge(new):
        return cur, True
    if isinstance(cur, DeferredGrad):
        return cur.materialize() + (new.materialize() if isinstance(new, DeferredGrad) else new), True
    if isinstance(new, DeferredGrad):
        new = new.materialize()
    if owned:
        cur += new
        return cur, True
    return cur + new, True


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_float_array(data, dtype)
        if self.data.dtype.type not in _FLOAT_TYPES:
            raise TypeError(f"unsupported dtype {self.data.dtype}; use float32 or float64")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- graph construction -------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        """Wrap an op result; record the graph edge only if some parent needs it.

        ``backward(g)`` must return one gradient (or None) per parent.
        """
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)

        # iterative DFS: rollouts make graphs far deeper than the recursion limit
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        owned: set[int] = set()  # buffers allocated here, safe to add into in place
        for node in reversed(order):
            key = id(node)
            g = grads.pop(key, None)
            owned.discard(key)
            if g is None:
                continue
            if isinstance(g, DeferredGrad):
                g = g.materialize()
            if node._backward is None:
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pkey = id(parent)
                if pkey not in grads:
                    grads[pkey] = pg
                else:
                    grads[pkey], _ = _accumulate(grads[pkey], pg, pkey in owned)
                    owned.add(pkey)

    # -- operator sugar -------------------------------------------------------
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

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __pow__(self, exponent: float):
        from . import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def relu(self):
        from . import ops
        return ops.relu(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
