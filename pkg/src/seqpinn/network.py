"""Fully connected tanh network whose per-layer parameters are the stacked,
time-gated values W + sum_i F_i(t) * dW_i, plus input embeddings and
initialization.

The forward pass never materializes per-sample weight matrices: the layer
is computed as Z @ W + F(t) * (Z @ dW), which keeps batched matmuls intact.
The same core serves plain numpy evaluation, jet evaluation (input
derivatives), and tape-recorded training passes, depending on what the
layer parameters and blend coefficients are (ndarray or Var).
"""

from dataclasses import dataclass

import numpy as np

from . import jets
from .jets import Jet
from .autodiff import X_AXIS, T_AXIS, derivative_table
from .ramps import ControlFunctionError


class ShapeError(ValueError):
    """Inconsistent layer shapes."""


class ParamSet:
    """Per-layer weights and biases; W_k has shape (fan_in, fan_out)."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases):
            raise ShapeError("weights/biases layer counts differ")
        for k, (W, b) in enumerate(zip(weights, biases)):
            if W.ndim != 2 or b.ndim != 1 or W.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {k}: W {W.shape} does not chain "
                                 f"with b {b.shape}")
            if k > 0 and weights[k - 1].shape[1] != W.shape[0]:
                raise ShapeError(f"layer {k}: fan-in {W.shape[0]} does not "
                                 f"match previous fan-out "
                                 f"{weights[k - 1].shape[1]}")
        self.weights = list(weights)
        self.biases = list(biases)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flatten(self):
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, flat, layer_sizes):
        weights, biases, off = [], [], 0
        for fi, fo in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(flat[off:off + fi * fo].reshape(fi, fo))
            off += fi * fo
            biases.append(flat[off:off + fo])
            off += fo
        if off != flat.size:
            raise ShapeError(f"flat vector of size {flat.size} does not match "
                             f"layer sizes {layer_sizes}")
        return cls(weights, biases)

    @classmethod
    def zeros(cls, layer_sizes):
        weights = [np.zeros((fi, fo)) for fi, fo in
                   zip(layer_sizes[:-1], layer_sizes[1:])]
        biases = [np.zeros(fo) for fo in layer_sizes[1:]]
        return cls(weights, biases)

    def copy(self):
        return type(self)([W.copy() for W in self.weights],
                          [b.copy() for b in self.biases])


class ParamDelta(ParamSet):
    """Correction term with shapes congruent to its base ParamSet.

    Zero-initialized at interval start; optionally carries the trainable
    saturation-time state, which adds exactly one trainable scalar.
    """

    def __init__(self, weights, biases, adaptive=None):
        super().__init__(weights, biases)
        self.adaptive = adaptive

    @classmethod
    def zeros_like(cls, base, adaptive=None):
        d = cls([np.zeros_like(W) for W in base.weights],
                [np.zeros_like(b) for b in base.biases])
        d.adaptive = adaptive
        return d

    @property
    def n_trainable(self):
        return self.n_params + (1 if self.adaptive is not None else 0)

    def flatten_trainable(self):
        flat = self.flatten()
        if self.adaptive is not None:
            flat = np.concatenate([flat, [self.adaptive.zeta]])
        return flat

    def set_trainable(self, flat):
        if self.adaptive is not None:
            core, zeta = flat[:-1], float(flat[-1])
            self.adaptive.zeta = zeta
        else:
            core = flat
        restored = ParamSet.from_flat(core, self.layer_sizes)
        self.weights = restored.weights
        self.biases = restored.biases


def xavier_init(layer_sizes, seed):
    """Glorot-uniform weights, zero biases; deterministic for a seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fi, fo in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-bound, bound, size=(fi, fo)))
        biases.append(np.zeros(fo))
    return ParamSet(weights, biases)


@dataclass(frozen=True)
class InputEmbedding:
    """Input map fed to the first layer.

    identity: X = (x, t).  fourier_periodic: X = (cos(2*pi*h*x/P),
    sin(2*pi*h*x/P) for h = 1..H, t), exactly periodic in x with period P.
    """

    kind: str = "identity"
    period: float = 2.0
    harmonics: int = 1

    @property
    def dim(self):
        if self.kind == "identity":
            return 2
        if self.kind == "fourier_periodic":
            return 2 * self.harmonics + 1
        raise ValueError(f"unknown embedding kind '{self.kind}'")

    def features(self, x, t):
        """Per-feature values; x and t may be scalars, arrays, or jets."""
        if self.kind == "identity":
            return [x, t]
        feats = []
        for h in range(1, self.harmonics + 1):
            w = 2.0 * np.pi * h / self.period
            feats.append(jets.cos(w * x))
            feats.append(jets.sin(w * x))
        feats.append(t)
        return feats

    def embed(self, x, t):
        """(N, dim) array for plain array inputs."""
        x = np.asarray(x, dtype=np.float64)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape)
        return np.column_stack([np.asarray(f, dtype=np.float64)
                                for f in self.features(x, t)])


def assemble_input_jet(embedding, x, t, orders):
    """Embed (x, t) and pack per-feature jets into matrix-coefficient jets.

    Returns a nested Jet (x outer, t inner) whose leaf coefficients are
    (N, dim) ndarrays, or a plain (N, dim) array when orders == (0, 0).
    """
    k_x, k_t = orders
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), x.shape)
    if k_x == 0 and k_t == 0:
        return embedding.embed(x, t)
    xj = jets.seed(x, k_x, axis=X_AXIS) if k_x > 0 else x
    tj = jets.seed(t, k_t, axis=T_AXIS) if k_t > 0 else t
    feats = embedding.features(xj, tj)
    n = x.shape[0]
    outer = []
    for i in range(k_x + 1):
        inner = []
        for j in range(k_t + 1):
            cols = []
            for f in feats:
                c = jets.mixed_coefficient(f, (i, j))
                cols.append(np.broadcast_to(np.asarray(c, dtype=np.float64),
                                            (n,)))
            inner.append(np.column_stack(cols))
        if k_t > 0:
            outer.append(Jet(inner, k_t, axis=T_AXIS))
        else:
            outer.append(inner[0])
    if k_x > 0:
        return Jet(outer, k_x, axis=X_AXIS)
    return outer[0]


def forward_core(X, layers, mod_terms=()):
    """Shared forward pass over arrays, jets, and tape nodes.

    X: input (array or nested jet with matrix leaf coefficients).
    layers: list of (W, b); entries may be ndarrays or Vars.
    mod_terms: list of (F, dlayers) where F is a scalar blend value,
    an inner-axis jet of (N, 1) coefficient arrays, or a jet of Var
    coefficients; dlayers is a list of (dW, db) matching `layers`.
    Hidden activations are tanh; the output layer is affine.
    """
    Z = X
    n_layers = len(layers)
    for k, (W, b) in enumerate(layers):
        pre = jets.map_leaves(Z, lambda c, W=W: c @ W) + b
        for F, dlayers in mod_terms:
            dW, db = dlayers[k]
            pre = pre + F * jets.map_leaves(Z, lambda c, dW=dW: c @ dW) + F * db
        Z = jets.tanh(pre) if k < n_layers - 1 else pre
    return Z


def _squeeze_output(u):
    """Drop the trailing singleton output dimension on leaf coefficients."""
    return jets.map_leaves(u, lambda c: c[:, 0] if (
        isinstance(c, np.ndarray) and c.ndim == 2) else
        (c.reshape((c.shape[0],)) if hasattr(c, "reshape") else c))


def _check_tt_request(orders, ramps_in_play):
    if orders[1] >= 2:
        for ramp in ramps_in_play:
            if ramp is not None and ramp.smoothness_order < 2:
                raise ControlFunctionError(
                    "second time derivatives require a C2 blend function "
                    "(e.g. the quintic shape); the schedule uses a C1 ramp")


# -- cross-pattern fast path ------------------------------------------
#
# PDE residuals need only pure derivatives (u, u_t, u_x, u_xx, u_xxx),
# never the mixed ones a full (k_x, k_t) jet carries.  The cross pass
# propagates exactly the streams {value, d/dt, d/dx^i} per layer, cutting
# the training cost by roughly a third.  Stream values are Taylor
# coefficients (same normalization as jets); extraction rescales by k!.

CROSS_KEYS = ("v", "t", "x1", "x2", "x3")


def cross_input(embedding, x, t, k_x, with_t=True):
    """Input streams for the cross pass from the generic jet assembly."""
    orders = (k_x, 1 if with_t else 0)
    X = assemble_input_jet(embedding, x, t, orders)
    streams = {"v": jets.mixed_coefficient(X, (0, 0))}
    if with_t:
        streams["t"] = jets.mixed_coefficient(X, (0, 1))
    for i in range(1, k_x + 1):
        streams[f"x{i}"] = jets.mixed_coefficient(X, (i, 0))
    n = np.atleast_1d(x).shape[0]
    for key, val in streams.items():
        if not isinstance(val, np.ndarray):
            val = np.broadcast_to(np.asarray(val, dtype=np.float64),
                                  (n, embedding.dim)).copy()
        streams[key] = val
    return streams


def _cross_tanh(s):
    h = {}
    hv = jets.tanh(s["v"])
    g0 = 1.0 - hv * hv
    h["v"] = hv
    if "t" in s:
        h["t"] = s["t"] * g0
    if "x1" in s:
        hx1 = s["x1"] * g0
        h["x1"] = hx1
    if "x2" in s:
        g1 = (-2.0 * hv) * hx1
        hx2 = s["x1"] * (0.5 * g1) + s["x2"] * g0
        h["x2"] = hx2
    if "x3" in s:
        g2 = -(hx1 * hx1 + (2.0 * hv) * hx2)
        h["x3"] = (s["x1"] * g2 + (s["x2"] * g1) * 2.0 +
                   (s["x3"] * g0) * 3.0) * (1.0 / 3.0)
    return h


def cross_forward(streams, layers, mods=()):
    """Forward pass over cross streams.

    mods: list of (F0, F1, dlayers): blend value and time-derivative
    coefficient per sample as (N, 1) arrays or Vars (F1 None when no 't'
    stream), and the correction's (dW, db) per layer.
    """
    keys = [k for k in CROSS_KEYS if k in streams]
    n_layers = len(layers)
    for k, (W, b) in enumerate(layers):
        new = {key: streams[key] @ W for key in keys}
        new["v"] = new["v"] + b
        for F0, F1, dlayers in mods:
            dW, db = dlayers[k]
            Bd = {key: streams[key] @ dW for key in keys}
            for key in keys:
                new[key] = new[key] + F0 * Bd[key]
            new["v"] = new["v"] + F0 * db
            if F1 is not None and "t" in new:
                new["t"] = new["t"] + F1 * Bd["v"] + F1 * db
        streams = _cross_tanh(new) if k < n_layers - 1 else new
    return streams


_CROSS_SCALE = {"v": ("u", 1.0), "t": ("u_t", 1.0), "x1": ("u_x", 1.0),
                "x2": ("u_xx", 2.0), "x3": ("u_xxx", 6.0)}


def cross_table(streams):
    """Derivative table from output streams (drops the output column)."""
    table = {}
    for key, s in streams.items():
        name, scale = _CROSS_SCALE[key]
        s = jets.map_leaves(s, lambda c: c.reshape((c.shape[0],)))
        table[name] = s * scale if scale != 1.0 else s
    return table


def forward(schedule, embedding, x, t, active=None, active_ramp=None,
            allow_extrapolation=False):
    """Network output u(x, t) under the stacked time-gated parameters.

    Plain float64 evaluation; equals the MLP run at the effective
    parameters of the schedule (plus the active correction, if given).
    """
    t_arr = np.broadcast_to(
        np.atleast_1d(np.asarray(t, dtype=np.float64)),
        np.atleast_1d(np.asarray(x, dtype=np.float64)).shape)
    schedule.check_domain(t_arr, allow_extrapolation)
    X = embedding.embed(np.atleast_1d(x), t_arr)
    layers = list(zip(schedule.base.weights, schedule.base.biases))
    mod_terms = []
    pairs = [(lvl.delta, lvl.ramp) for lvl in schedule.levels]
    if active is not None:
        pairs.append((active, active_ramp))
    for delta, ramp in pairs:
        F = ramp.eval(t_arr)[0].reshape(-1, 1)
        mod_terms.append((F, list(zip(delta.weights, delta.biases))))
    u = forward_core(X, layers, mod_terms)[:, 0]
    return u if np.ndim(x) > 0 else float(u[0])


def forward_jet(schedule, embedding, x, t, orders, active=None,
                active_ramp=None, allow_extrapolation=False,
                knot_side="right"):
    """u and its input derivatives up to `orders` = (k_x, k_t).

    The time derivative includes both the explicit input path and the
    parameter-gating path through F'(t) (and F'' when u_tt is requested).
    Returns a dict keyed like `u`, `u_x`, `u_t`, `u_xt`, ... of (N,) arrays.
    """
    k_x, k_t = orders
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)),
                            x.shape)
    schedule.check_domain(t_arr, allow_extrapolation)
    pairs = [(lvl.delta, lvl.ramp) for lvl in schedule.levels]
    if active is not None:
        pairs.append((active, active_ramp))
    _check_tt_request(orders, [r for _, r in pairs])
    X = assemble_input_jet(embedding, x, t_arr, orders)
    layers = list(zip(schedule.base.weights, schedule.base.biases))
    mod_terms = []
    for delta, ramp in pairs:
        coeffs = ramp.taylor_coeffs(t_arr, k_t, side=knot_side)
        coeffs = [c.reshape(-1, 1) for c in coeffs]
        F = Jet(coeffs, k_t, axis=T_AXIS) if k_t > 0 else coeffs[0]
        mod_terms.append((F, list(zip(delta.weights, delta.biases))))
    u = forward_core(X, layers, mod_terms)
    return derivative_table(_squeeze_output(u), orders)
