"""Dense tensors with tape-style reverse-mode differentiation.

Every differentiable operation records its parents and a closure mapping
the output gradient to parent gradients. ``Tensor.backward`` orders the
recorded graph topologically (rejecting cycles) and runs the closures in
reverse. Arrays are plain numpy buffers; the dtype of the inputs is kept,
so the same code runs in float32 for training and float64 for gradient
checks.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import GraphError, ShapeError

_recording = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording parents (inference only)."""
    global _recording
    previous = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = previous


def _as_array(x, dtype=None):
    if dtype is not None:
        return np.asarray(x, dtype=dtype)
    if isinstance(x, (np.ndarray, np.generic)) and np.issubdtype(x.dtype, np.floating):
        return np.asarray(x)
    return np.asarray(x, dtype=np.float32)


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op=""):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", op={self.op!r}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf."""
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        pending = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(_topological_order(self)):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)


def parameter(data, dtype=np.float32):
    """Trainable leaf tensor."""
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


def _topological_order(root):
    order = []
    state = {id(root): 1}  # 1: on the DFS stack, 2: finished
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        for p in parents:
            if not p.requires_grad:
                continue
            s = state.get(id(p))
            if s == 1:
                raise GraphError(f"cycle in recorded graph at {p!r}")
            if s is None:
                state[id(p)] = 1
                stack.append((p, iter(p._parents)))
                break
        else:
            stack.pop()
            state[id(node)] = 2
            order.append(node)
    return order


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(_as_array(x, dtype))


def _node(data, parents, backward, op):
    if _recording and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    """Elementwise product; either side may be a constant array (e.g. a mask)."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def square(a):
    a = _lift(a)

    def backward(g):
        return (2.0 * a.data * g,)

    return _node(a.data * a.data, (a,), backward, "square")


def relu(a):
    a = _lift(a)
    active = a.data > 0

    def backward(g):
        return (g * active,)

    return _node(a.data * active, (a,), backward, "relu")


def softmax(a, axis=-1):
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (a,), backward, "softmax")


def tsum(a, axis=None, keepdims=False):
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = _lift(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(count))


def sum_squares(a):
    return tsum(square(a))


def reshape(a, shape):
    a = _lift(a)

    def backward(g):
        return (g.reshape(a.shape),)

    return _node(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, axes=None):
    a = _lift(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _node(a.data.transpose(axes), (a,), backward, "transpose")


def expand(a, shape):
    """Broadcast to ``shape``; gradients of the copies accumulate into ``a``."""
    a = _lift(a)

    def backward(g):
        return (_unbroadcast(g, a.shape),)

    return _node(np.broadcast_to(a.data, shape), (a,), backward, "expand")


def getitem(a, idx):
    a = _lift(a)
    fancy = any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        out = np.zeros_like(a.data)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _node(a.data[idx], (a,), backward, "getitem")


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


def _conv_same(x, wmat, k):
    b, h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    # column order (row offset, column offset, channel) matches weight.reshape(k*k*C, O)
    cols = np.concatenate([xp[:, i:i + h, j:j + w, :] for i in range(k) for j in range(k)], axis=-1)
    cols = cols.reshape(b * h * w, k * k * c)
    return (cols @ wmat).reshape(b, h, w, wmat.shape[1]), cols


def conv2d(x, weight, bias=None):
    """Stride-1 'same' convolution (cross-correlation).

    x: (B, H, W, C) channels-last; weight: (k, k, C, O) with odd k; bias: (O,).
    """
    x = _lift(x)
    weight = _lift(weight, x)
    k, k2, c, o = weight.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {k}x{k2}")
    if x.ndim != 4 or x.shape[-1] != c:
        raise ShapeError(f"conv2d input {x.shape} does not match kernel channels {c}")
    wmat = weight.data.reshape(k * k * c, o)
    out, cols = _conv_same(x.data, wmat, k)
    parents = [x, weight]
    if bias is not None:
        bias = _lift(bias, x)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            flipped = weight.data[::-1, ::-1].transpose(0, 1, 3, 2)
            fmat = np.ascontiguousarray(flipped).reshape(k * k * o, c)
            gx = _conv_same(g, fmat, k)[0]
        if weight.requires_grad:
            gw = (cols.T @ g.reshape(-1, o)).reshape(k, k, c, o)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    return _node(out, parents, backward, "conv2d")
