"""High-level differentiation API: input-derivative tables and parameter
gradients, plus central finite-difference validators.

The finite-difference helpers never touch the jet/tape machinery, so they
serve as an independent cross-check of it.
"""

import numpy as np

from . import jets, tape
from .jets import Jet
from .tape import GradTape, Var, AutodiffError, NonFiniteError

X_AXIS = 0   # outer jet axis (spatial input)
T_AXIS = 1   # inner jet axis (time input)

# Optimal central-difference steps in float64, by derivative order.
FD_STEPS = {1: 1e-5, 2: 1e-4, 3: 1e-3}


def deriv_key(i, j):
    """Table key for the (d^i/dx^i)(d^j/dt^j) entry."""
    if i == 0 and j == 0:
        return "u"
    return "u_" + "x" * i + "t" * j


def input_jets(x, t, orders):
    """Seed (x, t) as nested jets for the requested derivative orders."""
    k_x, k_t = orders
    xj = jets.seed(x, k_x, axis=X_AXIS) if k_x > 0 else x
    tj = jets.seed(t, k_t, axis=T_AXIS) if k_t > 0 else t
    return xj, tj


def derivative_table(u, orders):
    """Extract all mixed partials up to `orders` from a jet result."""
    k_x, k_t = orders
    table = {}
    for i in range(k_x + 1):
        for j in range(k_t + 1):
            table[deriv_key(i, j)] = jets.mixed_derivative(u, (i, j))
    return table


def eval_with_input_derivs(f, point, orders):
    """Partial derivatives of f(x, t) up to orders (k_x <= 3, k_t <= 2).

    `f` must be composed of the registered primitives (arithmetic, tanh,
    exp, sin, cos, powers, piecewise polynomials); derivatives are exact
    truncated-Taylor values, no differencing involved.
    """
    k_x, k_t = orders
    if not (0 <= k_x <= 3 and 0 <= k_t <= 2):
        raise AutodiffError(f"orders {orders} outside supported range (3, 2)")
    x, t = point
    xj, tj = input_jets(float(x), float(t), orders)
    u = f(xj, tj)
    table = derivative_table(u, orders)
    for key, val in table.items():
        v = tape.value_of(val)
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite derivative {key} at point {point}")
        table[key] = float(v) if np.ndim(v) == 0 else v
    return table


def grad_params(loss, params):
    """Gradient of a scalar `loss(params_var)` at a flat parameter vector.

    The evaluation is recorded on a fresh GradTape; the returned gradient
    has the same length as `params`, and a constant loss yields zeros.
    """
    params = np.asarray(params, dtype=np.float64)
    gt = GradTape()
    p = gt.leaf(params)
    out = loss(p)
    if not isinstance(out, Var):
        # loss ignored its argument entirely
        return np.zeros_like(params)
    g = gt.gradient(out, [p])[0]
    g = np.asarray(g, dtype=np.float64)
    if g.shape != params.shape:
        raise AutodiffError(
            f"gradient shape {g.shape} does not match parameter shape {params.shape}")
    return g


def grad_params_of_residual(forward_derivs, params, residual):
    """Gradient of a squared PDE residual w.r.t. trainable parameters.

    `forward_derivs(param_vars)` evaluates the (time-modulated) network at
    the point of interest and returns the derivative table; `residual`
    maps that table to the residual value.  Gradients include the
    modulation path through F(t) and F'(t) because those enter the jet
    coefficients recorded on the tape.
    """
    params = np.asarray(params, dtype=np.float64)
    gt = GradTape()
    p = gt.leaf(params)
    table = forward_derivs(p)
    r = residual(table)
    sq = r * r if isinstance(r, Var) else Var(np.float64(r * r))
    g = gt.gradient(sq, [p])[0]
    return tape.value_of(sq), np.asarray(g, dtype=np.float64)


# -- finite-difference oracles (independent of jets/tape) ----------------

def fd_derivative(g, x0, order, h=None):
    """Central finite difference of a scalar function of one variable."""
    h = FD_STEPS[order] if h is None else h
    if order == 1:
        return (g(x0 + h) - g(x0 - h)) / (2 * h)
    if order == 2:
        return (g(x0 + h) - 2 * g(x0) + g(x0 - h)) / h ** 2
    if order == 3:
        return (g(x0 + 2 * h) - 2 * g(x0 + h) + 2 * g(x0 - h) - g(x0 - 2 * h)) \
            / (2 * h ** 3)
    raise ValueError(f"unsupported finite-difference order {order}")


def fd_input_derivative(f, point, wrt, orders, h=None):
    """FD estimate of a pure input derivative of f(x, t).

    wrt: "x" or "t"; orders: derivative order along that input.
    """
    x0, t0 = point
    if wrt == "x":
        return fd_derivative(lambda s: f(s, t0), x0, orders, h)
    return fd_derivative(lambda s: f(x0, s), t0, orders, h)


def fd_mixed_xt(f, point, h=1e-4):
    """FD estimate of u_xt via nested first differences."""
    x0, t0 = point

    def ux(t_):
        return (f(x0 + h, t_) - f(x0 - h, t_)) / (2 * h)

    return (ux(t0 + h) - ux(t0 - h)) / (2 * h)


def fd_gradient(loss, params, h=1e-6):
    """Componentwise central-difference gradient of a scalar loss."""
    params = np.asarray(params, dtype=np.float64)
    g = np.zeros_like(params)
    for i in range(params.size):
        dp = np.zeros_like(params)
        dp.flat[i] = h
        g.flat[i] = (loss(params + dp) - loss(params - dp)) / (2 * h)
    return g
