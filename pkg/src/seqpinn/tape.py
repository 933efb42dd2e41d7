"""Reverse-mode automatic differentiation on scalars and numpy arrays.

The engine is a Wengert list built eagerly by operator overloading: every
primitive produces a :class:`Var` that remembers its parents and one
vector-Jacobian closure per parent.  A backward sweep walks the recorded
nodes in reverse creation order and accumulates adjoints in a fixed order,
so repeated sweeps over the same graph give bitwise-identical gradients.

Var values are float64 scalars or ndarrays; broadcasting follows numpy and
is undone in the backward pass.  Only the primitives needed by the solver
are registered: +, -, *, /, **, matmul, tanh, exp, sin, cos, log, sum and
mean reductions, and concatenation.

Training evaluates a structurally identical graph every iteration, which
with plain numpy allocation means thousands of fresh multi-megabyte
buffers per step (and page-fault churn to match).  All large results are
therefore drawn from a buffer pool that recycles an array only when its
refcount proves nothing outside the pool still references it, which makes
reuse safe regardless of how callers hold on to Vars.
"""

import collections
import itertools
import sys

import numpy as np


class AutodiffError(Exception):
    """Base class for differentiation-engine errors."""


class UnsupportedPrimitiveError(AutodiffError):
    """An operation outside the registered primitive set was requested."""


class NonFiniteError(AutodiffError):
    """A non-finite value appeared where the contract requires finiteness."""


# -- pooled allocation ----------------------------------------------------

_POOL_MIN_SIZE = 4096       # elements; smaller results use plain numpy


class _BufferPool:
    """Recycles float64 scratch arrays by shape.

    Every array allocated through the pool stays registered in its shape
    bucket.  A buffer is handed out again only when its refcount shows the
    registry is its sole owner, so arrays referenced by live graphs are
    never overwritten; dead ones are collected by an amortized sweep when
    the free list runs dry.
    """

    def __init__(self):
        self.buckets = {}

    def empty(self, shape):
        bucket = self.buckets.get(shape)
        if bucket is None:
            bucket = self.buckets[shape] = ([], [])
        registry, free = bucket
        while free:
            arr = free.pop()
            if sys.getrefcount(arr) == 3:    # registry + local + arg
                return arr
        for arr in registry:                  # sweep for dead buffers
            if sys.getrefcount(arr) == 3:     # registry + loop var + arg
                free.append(arr)
        if free:
            return free.pop()
        arr = np.empty(shape, dtype=np.float64)
        registry.append(arr)
        return arr

    def clear(self):
        self.buckets = {}


_pool = _BufferPool()


def clear_pool():
    """Drop pooled buffers (live graphs keep theirs via their own refs)."""
    _pool.clear()


def _out_for(shape):
    n = 1
    for s in shape:
        n *= s
    return _pool.empty(shape) if n >= _POOL_MIN_SIZE else None


def _bin(ufunc, a, b):
    shape = np.broadcast_shapes(np.shape(a), np.shape(b))
    out = _out_for(shape)
    return ufunc(a, b, out=out) if out is not None else ufunc(a, b)


def _un(ufunc, a):
    out = _out_for(np.shape(a))
    return ufunc(a, out=out) if out is not None else ufunc(a)


def _mm(a, b):
    if np.ndim(a) == 2 and np.ndim(b) == 2:
        out = _out_for((a.shape[0], b.shape[1]))
        if out is not None:
            return np.matmul(a, b, out=out)
    return a @ b


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    if shape == ():
        return np.sum(grad)
    extra = np.ndim(grad) - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _shape(x):
    return x.shape if isinstance(x, np.ndarray) else ()


_JET = None


def _register_jet(cls):
    """Jet registers itself so Var binary ops defer to jet arithmetic."""
    global _JET
    _JET = cls


def _defers(other):
    return _JET is not None and isinstance(other, _JET)


class Var:
    """One node of the gradient tape.

    Parameters are leaf Vars (no parents); intermediate Vars carry a tuple
    of parent Vars and a matching tuple of vjp closures mapping the output
    adjoint to each parent's adjoint contribution.
    """

    __slots__ = ("value", "parents", "vjps", "serial")

    _serial_counter = itertools.count()

    # Keep numpy from consuming Var operands so reflected ops run.
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjps=()):
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.serial = next(Var._serial_counter)

    @property
    def shape(self):
        return _shape(self.value)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        if _defers(other):
            return NotImplemented
        if isinstance(other, Var):
            sa, sb = self.shape, other.shape
            return Var(_bin(np.add, self.value, other.value), (self, other),
                       (lambda g: _unbroadcast(g, sa),
                        lambda g: _unbroadcast(g, sb)))
        sa = self.shape
        return Var(_bin(np.add, self.value, other), (self,),
                   (lambda g: _unbroadcast(g, sa),))

    __radd__ = __add__

    def __neg__(self):
        return Var(_un(np.negative, self.value), (self,),
                   (lambda g: _un(np.negative, g),))

    def __sub__(self, other):
        if _defers(other):
            return NotImplemented
        if isinstance(other, Var):
            sa, sb = self.shape, other.shape
            return Var(_bin(np.subtract, self.value, other.value),
                       (self, other),
                       (lambda g: _unbroadcast(g, sa),
                        lambda g: _unbroadcast(_un(np.negative, g), sb)))
        sa = self.shape
        return Var(_bin(np.subtract, self.value, other), (self,),
                   (lambda g: _unbroadcast(g, sa),))

    def __rsub__(self, other):
        if _defers(other):
            return NotImplemented
        sa = self.shape
        return Var(_bin(np.subtract, other, self.value), (self,),
                   (lambda g: _unbroadcast(_un(np.negative, g), sa),))

    def __mul__(self, other):
        if _defers(other):
            return NotImplemented
        if isinstance(other, Var):
            sa, sb = self.shape, other.shape
            va, vb = self.value, other.value
            return Var(_bin(np.multiply, va, vb), (self, other),
                       (lambda g: _unbroadcast(_bin(np.multiply, g, vb), sa),
                        lambda g: _unbroadcast(_bin(np.multiply, g, va), sb)))
        sa = self.shape
        return Var(_bin(np.multiply, self.value, other), (self,),
                   (lambda g: _unbroadcast(_bin(np.multiply, g, other), sa),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _defers(other):
            return NotImplemented
        if isinstance(other, Var):
            sa, sb = self.shape, other.shape
            va, vb = self.value, other.value
            return Var(_bin(np.divide, va, vb), (self, other),
                       (lambda g: _unbroadcast(_bin(np.divide, g, vb), sa),
                        lambda g: _unbroadcast(
                            _bin(np.multiply, g,
                                 _bin(np.divide, _un(np.negative, va),
                                      _bin(np.multiply, vb, vb))), sb)))
        sa = self.shape
        return Var(_bin(np.divide, self.value, other), (self,),
                   (lambda g: _unbroadcast(_bin(np.divide, g, other), sa),))

    def __rtruediv__(self, other):
        if _defers(other):
            return NotImplemented
        sa = self.shape
        va = self.value
        return Var(_bin(np.divide, other, va), (self,),
                   (lambda g: _unbroadcast(
                       _bin(np.multiply, g,
                            _bin(np.divide, _un(np.negative, other) if
                                 isinstance(other, np.ndarray) else -other,
                                 _bin(np.multiply, va, va))), sa),))

    def __pow__(self, n):
        if isinstance(n, Var) or _defers(n):
            raise UnsupportedPrimitiveError(
                "primitive 'pow' supports constant exponents only")
        va = self.value
        return Var(va ** n, (self,),
                   (lambda g: _bin(np.multiply, g, n * va ** (n - 1)),))

    def __matmul__(self, other):
        if isinstance(other, Var):
            va, vb = self.value, other.value
            return Var(_mm(va, vb), (self, other),
                       (lambda g: _mm(g, vb.T), lambda g: _mm(va.T, g)))
        va = self.value
        return Var(_mm(va, other), (self,), (lambda g: _mm(g, other.T),))

    def __rmatmul__(self, other):
        va = self.value
        return Var(_mm(other, va), (self,), (lambda g: _mm(other.T, g),))

    # -- elementary functions ------------------------------------------

    def tanh(self):
        y = _un(np.tanh, self.value)

        def back(g):
            t = _bin(np.multiply, y, y)
            if isinstance(t, np.ndarray):
                np.subtract(1.0, t, out=t)
            else:
                t = 1.0 - t
            return _bin(np.multiply, g, t)

        return Var(y, (self,), (back,))

    def exp(self):
        y = _un(np.exp, self.value)
        if not np.all(np.isfinite(y)):
            raise NonFiniteError("overflow in primitive 'exp'")
        return Var(y, (self,), (lambda g: _bin(np.multiply, g, y),))

    def sin(self):
        va = self.value
        return Var(_un(np.sin, va), (self,),
                   (lambda g: _bin(np.multiply, g, _un(np.cos, va)),))

    def cos(self):
        va = self.value
        return Var(_un(np.cos, va), (self,),
                   (lambda g: _un(np.negative,
                                  _bin(np.multiply, g, _un(np.sin, va))),))

    def log(self):
        va = self.value
        return Var(_un(np.log, va), (self,),
                   (lambda g: _bin(np.divide, g, va),))

    def sqrt(self):
        y = _un(np.sqrt, self.value)
        return Var(y, (self,),
                   (lambda g: _bin(np.divide, _bin(np.multiply, g, 0.5), y),))

    # -- reductions and shaping ----------------------------------------

    def sum(self):
        sa = self.shape
        return Var(np.sum(self.value), (self,),
                   (lambda g: _bin(np.multiply, g, np.ones(sa)),))

    def mean(self):
        sa = self.shape
        n = self.value.size if isinstance(self.value, np.ndarray) else 1
        return Var(np.mean(self.value), (self,),
                   (lambda g: _bin(np.multiply, g / n, np.ones(sa)),))

    def reshape(self, shape):
        sa = self.shape
        return Var(self.value.reshape(shape), (self,),
                   (lambda g: g.reshape(sa),))

    # Comparisons and unsupported numeric protocols are outside the
    # registered primitive set.
    def _unsupported(name):
        def op(self, *args):
            raise UnsupportedPrimitiveError(f"primitive '{name}' is not registered")
        return op

    __lt__ = _unsupported("<")
    __le__ = _unsupported("<=")
    __gt__ = _unsupported(">")
    __ge__ = _unsupported(">=")
    __mod__ = _unsupported("%")
    __floordiv__ = _unsupported("//")
    __abs__ = _unsupported("abs")
    del _unsupported

    def __repr__(self):
        return f"Var(shape={self.shape}, serial={self.serial})"


def concat(vars_, axis=0):
    """Concatenate Vars/arrays along an axis with split backward."""
    nodes = [v for v in vars_ if isinstance(v, Var)]
    values = [v.value if isinstance(v, Var) else v for v in vars_]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)
    vjps = []
    for i, v in enumerate(vars_):
        if isinstance(v, Var):
            lo, hi = offsets[i], offsets[i + 1]
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(lo, hi)
            vjps.append(lambda g, sl=tuple(sl): g[sl])
    return Var(out, tuple(nodes), tuple(vjps))


def backward(output, leaves):
    """Adjoints of a scalar `output` Var with respect to `leaves`.

    Walks the recorded graph once; accumulation order is fixed by node
    serial numbers, so the result is bitwise reproducible.
    """
    if isinstance(output.value, np.ndarray) and output.value.size != 1:
        raise AutodiffError("backward requires a scalar output")
    by_serial = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node.serial in by_serial:
            continue
        by_serial[node.serial] = node
        stack.extend(node.parents)

    adjoint = {output.serial: np.float64(1.0)}
    for serial in sorted(by_serial, reverse=True):
        node = by_serial[serial]
        if not node.parents:
            continue
        g = adjoint.pop(serial, None)
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            prev = adjoint.get(parent.serial)
            if prev is None:
                adjoint[parent.serial] = contrib
            else:
                adjoint[parent.serial] = _bin(np.add, prev, contrib) \
                    if isinstance(prev, np.ndarray) else prev + contrib
    grads = []
    for leaf in leaves:
        g = adjoint.get(leaf.serial)
        if g is None:
            g = np.zeros_like(leaf.value) if isinstance(leaf.value, np.ndarray) \
                else np.float64(0.0)
        grads.append(g)
    return grads


class GradTape:
    """Driver for recording a loss evaluation and extracting gradients.

    The recorded primitive operations are the Var graph itself; `gradient`
    replays the same record, so two calls on one tape agree bitwise.
    A tape and its Vars belong to a single thread.
    """

    def __init__(self):
        self.leaves = []

    def leaf(self, value):
        v = Var(np.asarray(value, dtype=np.float64)
                if not np.isscalar(value) else np.float64(value))
        self.leaves.append(v)
        return v

    def gradient(self, output, leaves=None):
        leaves = self.leaves if leaves is None else leaves
        return backward(output, leaves)


# -- generic dispatch used by jet arithmetic and model code -------------

def tanh(x):
    return x.tanh() if isinstance(x, Var) else np.tanh(x)


def exp(x):
    return x.exp() if isinstance(x, Var) else np.exp(x)


def sin(x):
    return x.sin() if isinstance(x, Var) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Var) else np.cos(x)


def log(x):
    return x.log() if isinstance(x, Var) else np.log(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Var) else np.sqrt(x)


def mean(x):
    return x.mean() if isinstance(x, Var) else np.mean(x)


def total(x):
    return x.sum() if isinstance(x, Var) else np.sum(x)


def value_of(x):
    """Plain numpy value of a Var, or the input unchanged."""
    return x.value if isinstance(x, Var) else x
