"""Minimal tape-based reverse-mode autodiff over numpy arrays.

Only the operations the score networks need are provided. Gradients are
accumulated in float64.
"""
import numpy as np

from . import _kernels


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        if any(p.requires_grad for p in parents):
            return Tensor(data, True, parents, backward)
        return Tensor(data)

    def _accum(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    # -- elementwise --------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = None

        def backward(g):
            self._accum(_unbroadcast(g, self.shape))
            other._accum(_unbroadcast(g, other.shape))

        out = Tensor._make(self.data + other.data, (self, other), backward)
        return out

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: self._accum(-g))

    def __sub__(self, other):
        return self + (-(other if isinstance(other, Tensor) else Tensor(other)))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))

        return Tensor._make(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / np.asarray(scalar, dtype=np.float64))

    def elu(self):
        out, deriv = _kernels.elu(np.ascontiguousarray(self.data))
        return Tensor._make(out, (self,), lambda g: self._accum(g * deriv))

    def __getitem__(self, idx):
        """Numpy indexing; repeated indices accumulate in the backward pass."""
        shape = self.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            self._accum(full)

        return Tensor._make(self.data[idx], (self,), backward)

    def take(self, idx):
        return self[idx]

    # -- linear algebra / shape --------------------------------------------

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))

        return Tensor._make(a @ b, (self, other), backward)

    def swapaxes(self, i, j):
        return Tensor._make(np.swapaxes(self.data, i, j), (self,),
                            lambda g: self._accum(np.swapaxes(g, i, j)))

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor._make(np.transpose(self.data, axes), (self,),
                            lambda g: self._accum(np.transpose(g, inv)))

    def reshape(self, *shape):
        old = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,),
                            lambda g: self._accum(g.reshape(old)))

    def sum(self, axis=None, keepdims=False):
        old = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, old).copy())

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    # -- autodiff driver ----------------------------------------------------

    def backward(self):
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def concat(tensors, axis=-1):
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(piece)

    return Tensor._make(np.concatenate(datas, axis=axis), tensors, backward)


def scatter_symmetric(values, shape, b, i, j):
    """Dense ``(B, N, N)`` tensor with ``values`` at ``(b, i, j)`` and ``(b, j, i)``.

    Index pairs must be unique with ``i <= j``.
    """
    out = np.zeros(shape)
    v = values.data
    out[b, i, j] = v
    out[b, j, i] = v

    def backward(g):
        gv = g[b, i, j] + g[b, j, i]
        diag = i == j
        gv[diag] = g[b[diag], i[diag], j[diag]]
        values._accum(gv)

    return Tensor._make(out, (values,), backward)
