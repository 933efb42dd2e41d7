"""Forward-mode truncated Taylor (jet) arithmetic.

A :class:`Jet` is a Taylor polynomial in one formal variable, truncated at
`order`; coefficients use the Taylor normalization c_k = f^(k)/k!.
Coefficients may be floats, float64 ndarrays, tape ``Var`` nodes, or Jets in
another variable, which is how mixed (x, t) derivatives are formed: jets
nest by `axis`, lower axis outermost.  All recurrences reduce to ring
operations on coefficients, so the same code path serves plain evaluation,
nested jets, and tape-recorded training passes.

Elementary functions follow the classic Taylor recurrences (tanh through
tanh' = 1 - tanh^2, which stays stable in float64).
"""

import math

import numpy as np

from . import tape
from .tape import UnsupportedPrimitiveError


def _is_zero(c):
    return isinstance(c, float) and c == 0.0


def _is_one(c):
    return isinstance(c, float) and c == 1.0


def _mul(a, b):
    """Coefficient product with 0/1 short-circuits (floats fold eagerly)."""
    if _is_zero(a) or _is_zero(b):
        return 0.0
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    return a * b


def _acc(acc, term):
    if _is_zero(term):
        return acc
    return term if acc is None else acc + term


def _is_scalar_for(jet, other):
    """True when `other` acts as a plain coefficient for `jet`."""
    return not isinstance(other, Jet) or other.axis > jet.axis


# registered at the bottom of this module: Var ops defer to Jet arithmetic


class Jet:
    __slots__ = ("coeffs", "order", "axis")

    # Keep numpy from broadcasting over Jet operands; reflected ops run.
    __array_ufunc__ = None

    def __init__(self, coeffs, order, axis=0):
        if len(coeffs) > order + 1:
            coeffs = tuple(coeffs)[: order + 1]
        self.coeffs = tuple(coeffs)
        self.order = order
        self.axis = axis

    def _wrap(self, coeffs):
        return Jet(coeffs, self.order, self.axis)

    def coefficient(self, k):
        """k-th Taylor coefficient (0 when truncated away)."""
        return self.coeffs[k] if k < len(self.coeffs) else 0.0

    def derivative(self, k):
        """k-th derivative value: coefficient times k!."""
        c = self.coefficient(k)
        return c * math.factorial(k) if k > 1 else c

    # -- ring operations -----------------------------------------------

    def __add__(self, other):
        if _is_scalar_for(self, other):
            return self._wrap((self.coeffs[0] + other,) + self.coeffs[1:])
        if other.axis < self.axis:
            return other.__add__(self)
        n = max(len(self.coeffs), len(other.coeffs))
        coeffs = []
        for k in range(n):
            a, b = self.coefficient(k), other.coefficient(k)
            if _is_zero(a):
                coeffs.append(b)
            elif _is_zero(b):
                coeffs.append(a)
            else:
                coeffs.append(a + b)
        return Jet(coeffs, max(self.order, other.order), self.axis)

    __radd__ = __add__

    def __neg__(self):
        return self._wrap(tuple(0.0 if _is_zero(c) else -c for c in self.coeffs))

    def __sub__(self, other):
        if isinstance(other, Jet) and not _is_scalar_for(self, other):
            return self.__add__(-other)
        return self._wrap((self.coeffs[0] - other,) + self.coeffs[1:])

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if _is_scalar_for(self, other):
            return self._wrap(tuple(_mul(c, other) for c in self.coeffs))
        if other.axis < self.axis:
            return other.__mul__(self)
        la, lb = len(self.coeffs), len(other.coeffs)
        order = max(self.order, other.order)
        n = min(order + 1, la + lb - 1)
        coeffs = []
        for k in range(n):
            acc = None
            for i in range(max(0, k - lb + 1), min(la - 1, k) + 1):
                acc = _acc(acc, _mul(self.coeffs[i], other.coeffs[k - i]))
            coeffs.append(0.0 if acc is None else acc)
        return Jet(coeffs, order, self.axis)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _is_scalar_for(self, other):
            return self._wrap(tuple(0.0 if _is_zero(c) else c / other
                                    for c in self.coeffs))
        if other.axis < self.axis:
            raise UnsupportedPrimitiveError(
                "division by an outer-axis jet is not supported")
        order = max(self.order, other.order)
        b0 = other.coeffs[0]
        out = []
        for k in range(order + 1):
            acc = self.coefficient(k)
            for i in range(k):
                acc = acc - _mul(out[i], other.coefficient(k - i))
            out.append(acc / b0 if not _is_zero(acc) else 0.0)
        return Jet(out, order, self.axis)

    def __rtruediv__(self, other):
        return Jet((other,), self.order, self.axis).__truediv__(self)

    def __pow__(self, n):
        if isinstance(n, int) or (isinstance(n, float) and n.is_integer()):
            n = int(n)
            if n < 0:
                return 1.0 / self.__pow__(-n)
            result = Jet((1.0,), self.order, self.axis)
            base = self
            while n:
                if n & 1:
                    result = result * base
                n >>= 1
                if n:
                    base = base * base
            return result
        return exp(log(self) * n)

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
        return f"Jet(axis={self.axis}, order={self.order}, ncoeffs={len(self.coeffs)})"


def seed(value, order, axis=0):
    """Jet representing the variable itself: value + 1*dvar."""
    if order == 0:
        return Jet((value,), 0, axis)
    return Jet((value, 1.0), order, axis)


def constant(value, order, axis=0):
    return Jet((value,), order, axis)


def _scaled_derivs(u, K):
    """du[j] = j * u_j for j = 1..K (0.0 where truncated)."""
    return [0.0] + [_mul(float(j), u.coefficient(j)) for j in range(1, K + 1)]


# -- elementary functions ---------------------------------------------

def tanh(u):
    if not isinstance(u, Jet):
        return tape.tanh(u)
    K = u.order
    du = _scaled_derivs(u, K)
    h = [tanh(u.coeffs[0])]
    g = [1.0 - _mul(h[0], h[0])]       # g = 1 - tanh^2
    for k in range(1, K + 1):
        acc = None
        for j in range(1, k + 1):
            acc = _acc(acc, _mul(du[j], g[k - j]))
        h.append(0.0 if acc is None else acc * (1.0 / k))
        if k < K:
            gk = None
            for i in range(0, k + 1):
                gk = _acc(gk, _mul(h[i], h[k - i]))
            g.append(0.0 if gk is None else -gk)
    return u._wrap(tuple(h))


def exp(u):
    if not isinstance(u, Jet):
        return tape.exp(u)
    K = u.order
    du = _scaled_derivs(u, K)
    e = [exp(u.coeffs[0])]
    for k in range(1, K + 1):
        acc = None
        for j in range(1, k + 1):
            acc = _acc(acc, _mul(du[j], e[k - j]))
        e.append(0.0 if acc is None else acc * (1.0 / k))
    return u._wrap(tuple(e))


def sin(u):
    return _sincos(u)[0]


def cos(u):
    return _sincos(u)[1]


def _sincos(u):
    if not isinstance(u, Jet):
        return tape.sin(u), tape.cos(u)
    K = u.order
    du = _scaled_derivs(u, K)
    s0, c0 = _sincos(u.coeffs[0])
    s, c = [s0], [c0]
    for k in range(1, K + 1):
        sa = ca = None
        for j in range(1, k + 1):
            sa = _acc(sa, _mul(du[j], c[k - j]))
            ca = _acc(ca, _mul(du[j], s[k - j]))
        s.append(0.0 if sa is None else sa * (1.0 / k))
        c.append(0.0 if ca is None else ca * (-1.0 / k))
    return u._wrap(tuple(s)), u._wrap(tuple(c))


def log(u):
    if not isinstance(u, Jet):
        return tape.log(u)
    K = u.order
    a0 = u.coeffs[0]
    out = [log(a0)]
    for k in range(1, K + 1):
        acc = _mul(float(k), u.coefficient(k))
        for j in range(1, k):
            acc = acc - _mul(_mul(float(j), out[j]), u.coefficient(k - j))
        out.append(acc / a0 * (1.0 / k) if not _is_zero(acc) else 0.0)
    return u._wrap(tuple(out))


def sqrt(u):
    if not isinstance(u, Jet):
        return tape.sqrt(u)
    K = u.order
    r = [sqrt(u.coeffs[0])]
    for k in range(1, K + 1):
        acc = u.coefficient(k)
        for i in range(1, k):
            acc = acc - _mul(r[i], r[k - i])
        r.append(acc / (2.0 * r[0]) if not _is_zero(acc) else 0.0)
    return u._wrap(tuple(r))


def map_leaves(u, f):
    """Apply a linear map f to every leaf coefficient of a (nested) jet."""
    if isinstance(u, Jet):
        return u._wrap(tuple(0.0 if _is_zero(c) else map_leaves(c, f)
                             for c in u.coeffs))
    return f(u)


def mixed_coefficient(u, orders):
    """Taylor coefficient for per-axis `orders`, e.g. (i, j) for (x, t).

    Navigation is axis-aware: each nested jet consumes the order of its own
    axis.  Axes the value does not depend on admit only order 0; requesting
    a positive order along them yields an exact 0.
    """
    consumed = set()

    def rec(v):
        if isinstance(v, Jet):
            consumed.add(v.axis)
            k = orders[v.axis] if v.axis < len(orders) else 0
            return rec(v.coefficient(k))
        return v

    val = rec(u)
    for axis, k in enumerate(orders):
        if k > 0 and axis not in consumed:
            return 0.0
    return val


def mixed_derivative(u, orders):
    c = mixed_coefficient(u, orders)
    scale = 1.0
    for k in orders:
        scale *= math.factorial(k)
    return c * scale if scale != 1.0 else c


def finite_check(x, context="jet evaluation"):
    """Raise NonFiniteError when a value (Var/array/scalar) is non-finite."""
    v = tape.value_of(x)
    if not np.all(np.isfinite(v)):
        raise tape.NonFiniteError(f"non-finite intermediate in {context}")
    return x


tape._register_jet(Jet)
