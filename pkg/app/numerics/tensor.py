"""Dense tensors with reverse-mode differentiation.

A ``Tensor`` wraps a numpy array. When any input of an operation requires a
gradient, the result records its parents and a backward function mapping the
upstream gradient to one gradient per parent. ``Tensor.backward`` walks the
recorded graph in reverse topological order and accumulates ``grad`` on the
leaves (the parameters).
"""

import contextlib
import threading

import numpy as np
from scipy.special import expit

from app.errors import DimensionError

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (evaluation and finite differences)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def unbroadcast(grad, shape):
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is Ellipsis or p is None or isinstance(p, (slice, int, np.integer)) for p in parts)


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = axis if isinstance(axis, tuple) else (axis,)
    return tuple(a % ndim for a in axes)


class Tensor:
    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_parents', '_backward')
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data)
        if dtype is not None:
            array = array.astype(dtype, copy=False)
        elif not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @classmethod
    def _result(cls, data, parents, backward):
        out = cls(data, dtype=data.dtype if isinstance(data, np.ndarray) else None)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

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

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f'item() on a tensor of shape {self.shape}')
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def is_finite(self):
        return bool(np.all(np.isfinite(self.data)))

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # ------------------------------------------------------------------
    # Backward pass
    # ------------------------------------------------------------------

    def _topological_order(self):
        order, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad=None):
        if not self.requires_grad:
            raise DimensionError('backward() called on a tensor that does not require gradients')
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f'backward() on shape {self.shape} needs an explicit gradient')
            grad = np.ones_like(self.data)

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(self._topological_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ------------------------------------------------------------------
    # Arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
        return Tensor._result(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)
        return Tensor._result(a.data - b.data, (a, b), backward)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        a = self
        return Tensor._result(-a.data, (a,), lambda g: (-g,))

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb
        return Tensor._result(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
            return ga, gb
        return Tensor._result(a.data / b.data, (a, b), backward)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self, other
        if a.ndim == 0 or b.ndim == 0:
            raise DimensionError('matmul needs operands of rank >= 1')
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise DimensionError(f'matmul shape mismatch: {a.shape} @ {b.shape}')

        a2 = a.data if a.ndim > 1 else a.data.reshape(1, -1)
        b2 = b.data if b.ndim > 1 else b.data.reshape(-1, 1)
        out2 = np.matmul(a2, b2)

        def backward(g):
            g2 = g.reshape(out2.shape)
            ga = gb = None
            if a.requires_grad:
                ga = unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape).reshape(a.shape)
            if b.requires_grad:
                gb = unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape).reshape(b.shape)
            return ga, gb
        return Tensor._result(np.matmul(a.data, b.data), (a, b), backward)

    # ------------------------------------------------------------------
    # Reductions and shape manipulation
    # ------------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        axes = _normalize_axes(axis, a.ndim)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, a.shape).copy(),)
        return Tensor._result(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), backward)

    def mean(self, axis=None, keepdims=False):
        axes = _normalize_axes(axis, self.ndim)
        count = int(np.prod([self.shape[i] for i in axes])) if axes else 1
        return self.sum(axis=axes, keepdims=keepdims) / float(max(count, 1))

    def max(self, axis=-1):
        """Maximum along ``axis``; the gradient goes to the first maximiser."""
        a = self
        axis = axis % a.ndim
        index = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        out = np.take_along_axis(a.data, index, axis=axis).squeeze(axis)

        def backward(g):
            grad = np.zeros_like(a.data)
            np.put_along_axis(grad, index, np.expand_dims(g, axis), axis=axis)
            return (grad,)
        return Tensor._result(out, (a,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        a = self
        axes = axes or tuple(reversed(range(a.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))

    def swapaxes(self, first, second):
        a = self
        return Tensor._result(np.swapaxes(a.data, first, second), (a,),
                              lambda g: (np.swapaxes(g, first, second),))

    def broadcast_to(self, shape):
        a = self
        return Tensor._result(np.broadcast_to(a.data, shape).copy(), (a,),
                              lambda g: (unbroadcast(g, a.shape),))

    def __getitem__(self, index):
        a = self
        if isinstance(index, Tensor):
            index = index.data.astype(np.intp)
        basic = _is_basic_index(index)

        def backward(g):
            grad = np.zeros_like(a.data)
            if basic:
                grad[index] = g
            else:
                np.add.at(grad, index, g)
            return (grad,)
        return Tensor._result(np.asarray(a.data[index]), (a,), backward)

    # ------------------------------------------------------------------
    # Elementwise non-linearities
    # ------------------------------------------------------------------

    def relu(self):
        a = self
        active = a.data > 0
        return Tensor._result(np.where(active, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * active,))

    def tanh(self):
        a = self
        y = np.tanh(a.data)
        return Tensor._result(y, (a,), lambda g: (g * (1.0 - y * y),))

    def sigmoid(self):
        a = self
        y = expit(a.data)
        return Tensor._result(y, (a,), lambda g: (g * y * (1.0 - y),))

    def exp(self):
        a = self
        y = np.exp(a.data)
        return Tensor._result(y, (a,), lambda g: (g * y,))

    def log(self):
        a = self
        return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,))


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    axis = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return Tensor._result(out, tuple(tensors), backward)
