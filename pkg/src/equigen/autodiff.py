"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Every differentiable operation in this package is written against the
functions below.  When no argument is a :class:`Tensor` the functions fall
through to plain numpy, so the same numerical code serves both gradient-free
inference (raw ndarrays, no tape) and training (Tensors, taped).

The engine is a classic tape: each Tensor remembers its parents and a
vector-Jacobian closure; ``backward`` walks the graph once in reverse
topological order.  All arrays are float64 and all operations are pure
(no in-place mutation of tape values), which keeps runs bit-reproducible.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "tensor", "value", "is_tensor",
    "einsum", "sum", "mean", "reshape", "swapaxes", "concat", "broadcast_to",
    "exp", "log", "sqrt", "absolute", "tanh", "sigmoid", "softplus",
    "sin", "cos", "maximum", "minimum", "stop_gradient", "getitem",
]

_float = np.float64


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=_float)


class Tensor:
    """Array node on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    # keep numpy from hijacking ndarray <op> Tensor expressions
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _vjp: Callable | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of a scalar (or seeded) output into leaf .grad fields."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed requires a scalar output")
            seed = np.ones_like(self.data)
        # iterative topological order (graphs are deep; avoid recursion limits)
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
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = _as_array(seed)
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    # --- operators -------------------------------------------------------
    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, _neg(other))

    def __rsub__(self, other):
        return _add(_neg(self), other)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _mul(self, _reciprocal(other))

    def __rtruediv__(self, other):
        return _mul(_reciprocal(self), other)

    def __neg__(self):
        return _neg(self)

    def __pow__(self, p):
        return _powc(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def value(x) -> np.ndarray:
    """Underlying ndarray of a Tensor, or the array itself."""
    return x.data if isinstance(x, Tensor) else _as_array(x)


def stop_gradient(x):
    return Tensor(x.data) if isinstance(x, Tensor) else _as_array(x)


def _any_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise arithmetic ----------------------------------------------

def _add(a, b):
    if not _any_tensor(a, b):
        return _as_array(a) + _as_array(b)
    a, b = tensor(a), tensor(b)
    out_data = a.data + b.data

    def vjp(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


def _neg(a):
    if not _any_tensor(a):
        return -_as_array(a)
    out = Tensor(-a.data, _parents=(a,), _vjp=lambda g: _accum(a, -g))
    return out


def _mul(a, b):
    if not _any_tensor(a, b):
        return _as_array(a) * _as_array(b)
    a, b = tensor(a), tensor(b)
    out_data = a.data * b.data

    def vjp(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


def _reciprocal(a):
    if not _any_tensor(a):
        return 1.0 / _as_array(a)
    out_data = 1.0 / a.data

    def vjp(g):
        _accum(a, -g * out_data * out_data)

    return Tensor(out_data, _parents=(a,), _vjp=vjp)


def _powc(a, p):
    # exponent is a constant (scalar or array), never differentiated through
    p = _as_array(p) if not np.isscalar(p) else float(p)
    if isinstance(p, Tensor):
        raise TypeError("tensor-valued exponents are not supported")
    if not _any_tensor(a):
        return _as_array(a) ** p
    out_data = a.data ** p

    def vjp(g):
        _accum(a, _unbroadcast(g * p * a.data ** (p - 1.0), a.data.shape))

    return Tensor(out_data, _parents=(a,), _vjp=vjp)


def _unary(np_fn, dfn):
    def op(a):
        if not _any_tensor(a):
            return np_fn(_as_array(a))
        out_data = np_fn(a.data)

        def vjp(g):
            _accum(a, g * dfn(a.data, out_data))

        return Tensor(out_data, _parents=(a,), _vjp=vjp)

    return op


exp = _unary(np.exp, lambda x, y: y)
log = _unary(np.log, lambda x, y: 1.0 / x)
sqrt = _unary(np.sqrt, lambda x, y: 0.5 / y)
absolute = _unary(np.abs, lambda x, y: np.sign(x))
tanh = _unary(np.tanh, lambda x, y: 1.0 - y * y)
sin = _unary(np.sin, lambda x, y: np.cos(x))
cos = _unary(np.cos, lambda x, y: -np.sin(x))


def _sigmoid_np(x):
    # tanh form is stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


sigmoid = _unary(_sigmoid_np, lambda x, y: y * (1.0 - y))
softplus = _unary(lambda x: np.logaddexp(0.0, x), lambda x, y: _sigmoid_np(x))


def maximum(a, b):
    if not _any_tensor(a, b):
        return np.maximum(_as_array(a), _as_array(b))
    a, b = tensor(a), tensor(b)
    out_data = np.maximum(a.data, b.data)
    mask = a.data >= b.data  # ties route to the first operand

    def vjp(g):
        _accum(a, _unbroadcast(g * mask, a.data.shape))
        _accum(b, _unbroadcast(g * (~mask), b.data.shape))

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


def minimum(a, b):
    if not _any_tensor(a, b):
        return np.minimum(_as_array(a), _as_array(b))
    a, b = tensor(a), tensor(b)
    out_data = np.minimum(a.data, b.data)
    mask = a.data <= b.data

    def vjp(g):
        _accum(a, _unbroadcast(g * mask, a.data.shape))
        _accum(b, _unbroadcast(g * (~mask), b.data.shape))

    return Tensor(out_data, _parents=(a, b), _vjp=vjp)


# --- shape ops -------------------------------------------------------------

def reshape(a, shape):
    if not _any_tensor(a):
        return _as_array(a).reshape(shape)
    old_shape = a.data.shape
    out = Tensor(a.data.reshape(shape), _parents=(a,),
                 _vjp=lambda g: _accum(a, g.reshape(old_shape)))
    return out


def swapaxes(a, ax1, ax2):
    if not _any_tensor(a):
        return np.swapaxes(_as_array(a), ax1, ax2)
    out = Tensor(np.swapaxes(a.data, ax1, ax2), _parents=(a,),
                 _vjp=lambda g: _accum(a, np.swapaxes(g, ax1, ax2)))
    return out


def broadcast_to(a, shape):
    if not _any_tensor(a):
        return np.broadcast_to(_as_array(a), shape)
    src_shape = a.data.shape
    out = Tensor(np.broadcast_to(a.data, shape), _parents=(a,),
                 _vjp=lambda g: _accum(a, _unbroadcast(g, src_shape)))
    return out


def getitem(a, idx):
    if not _any_tensor(a):
        return _as_array(a)[idx]
    out_data = a.data[idx]
    shape = a.data.shape

    def _is_basic(i):
        return isinstance(i, (int, slice)) or i is Ellipsis or i is None

    basic = _is_basic(idx) or (isinstance(idx, tuple) and all(_is_basic(i) for i in idx))

    def vjp(g):
        buf = np.zeros(shape, dtype=_float)
        if basic:
            buf[idx] += g  # basic indexing never aliases
        else:
            np.add.at(buf, idx, g)
        _accum(a, buf)

    return Tensor(out_data, _parents=(a,), _vjp=vjp)


def concat(parts: Sequence, axis: int = -1):
    if not _any_tensor(*parts):
        return np.concatenate([_as_array(p) for p in parts], axis=axis)
    parts = [tensor(p) for p in parts]
    datas = [p.data for p in parts]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return Tensor(out_data, _parents=tuple(parts), _vjp=vjp)


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    if not _any_tensor(a):
        return _as_array(a).sum(axis=axis, keepdims=keepdims)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.data.shape

    def vjp(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, in_shape).copy())
            return
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        _accum(a, np.broadcast_to(g, in_shape).copy())

    return Tensor(out_data, _parents=(a,), _vjp=vjp)


def mean(a, axis=None, keepdims: bool = False):
    if not _any_tensor(a):
        return _as_array(a).mean(axis=axis, keepdims=keepdims)
    data = a.data
    if axis is None:
        count = data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([data.shape[ax] for ax in axes]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# --- einsum ----------------------------------------------------------------

def einsum(spec: str, *ops):
    """Einstein summation with reverse-mode support.

    The VJP for operand i swaps that operand's subscript with the output
    subscript, which is valid as long as every index of operand i appears in
    the output or in another operand (always the case for the contraction
    patterns used in this package; no 'ii'-style diagonals).
    """
    if not _any_tensor(*ops):
        return np.einsum(spec, *[_as_array(o) for o in ops])
    ops = [tensor(o) for o in ops]
    datas = [o.data for o in ops]
    out_data = np.einsum(spec, *datas)

    lhs, rhs = spec.split("->")
    subs = lhs.split(",")

    def vjp(g):
        for i, o in enumerate(ops):
            if not o.requires_grad:
                continue
            other_subs = [subs[j] for j in range(len(ops)) if j != i]
            other_data = [datas[j] for j in range(len(ops)) if j != i]
            target = subs[i]
            if "..." not in target and ("..." in rhs or any("..." in s for s in other_subs)):
                # einsum cannot sum ellipsis dims away; emit them, then reduce
                target = "..." + target
            gi = np.einsum(",".join([rhs] + other_subs) + "->" + target, g, *other_data)
            if gi.shape != o.data.shape:  # broadcast and/or ellipsis dims to reduce
                gi = _unbroadcast(gi, o.data.shape)
            _accum(o, gi)

    return Tensor(out_data, _parents=tuple(ops), _vjp=vjp)
