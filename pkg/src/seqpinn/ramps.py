"""Blending functions that gate parameter corrections over time, plus the
interval-stacking schedule.

A ramp F(t) is 0 up to its start knot T_p, rises smoothly on [T_p, T_f),
and is 1 from the saturation knot T_f on, with F'(T_p) = F'(T_f) = 0 so the
network output stays C1 at interval nodes.  At the knots the right-hand
piece is used; both one-sided limits of F and F' agree there by
construction, so the convention only matters for F'' of C1 ramps.

Every built-in ramp is one normalized shape p(s) on [0, 1] rescaled by
s = (t - T_p)/(T_f - T_p).  The library of ten variants consists of five
shapes instantiated in "gradual" form (T_f = T) and "rapid" form
(T_f = T_p + (T - T_p)/M); the published cubic rapid variant had a wrong
quadratic coefficient (it misses F(T_p) = 0 by -75) and is shipped with
the corrected Hermite coefficients, flagged in its metadata.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .tape import Var


class ControlFunctionError(ValueError):
    """Invalid ramp construction or invariant violation."""


class OutOfDomainError(ValueError):
    """Evaluation time outside the trained schedule."""


@dataclass(frozen=True)
class RampShape:
    """Normalized profile p on [0, 1] with p(0)=0, p(1)=1, p'(0)=p'(1)=0."""

    name: str
    p: callable
    dp: callable
    d2p: callable
    smoothness_order: int = 1
    monotone: bool = True


def _cubic(s):
    return (3.0 - 2.0 * s) * s * s


def _cubic_d(s):
    return 6.0 * s * (1.0 - s)


def _cubic_d2(s):
    return 6.0 - 12.0 * s


def _quintic(s):
    return ((6.0 * s - 15.0) * s + 10.0) * s ** 3


def _quintic_d(s):
    return ((30.0 * s - 60.0) * s + 30.0) * s * s


def _quintic_d2(s):
    return ((120.0 * s - 180.0) * s + 60.0) * s


def _sine_sq(s):
    return np.sin(0.5 * np.pi * s) ** 2


def _sine_sq_d(s):
    return 0.5 * np.pi * np.sin(np.pi * s)


def _sine_sq_d2(s):
    return 0.5 * np.pi ** 2 * np.cos(np.pi * s)


def _quartic(s):
    return ((s - 4.0) * s + 4.0) * s * s


def _quartic_d(s):
    return ((4.0 * s - 12.0) * s + 8.0) * s


def _quartic_d2(s):
    return (12.0 * s - 24.0) * s + 8.0


def _exp_cubic(s):
    return np.exp(s * s - s) + ((-2.0 * s + 2.0) * s + 1.0) * s - 1.0


def _exp_cubic_d(s):
    return (2.0 * s - 1.0) * np.exp(s * s - s) + (-6.0 * s + 4.0) * s + 1.0


def _exp_cubic_d2(s):
    return (2.0 + (2.0 * s - 1.0) ** 2) * np.exp(s * s - s) - 12.0 * s + 4.0


def _exp_quartic(s):
    q = (s * s - s) ** 2
    return np.exp(q) + np.sin(0.5 * np.pi * s) ** 2 - 1.0


def _exp_quartic_d(s):
    q = s * s - s
    return 2.0 * q * (2.0 * s - 1.0) * np.exp(q * q) + 0.5 * np.pi * np.sin(np.pi * s)


def _exp_quartic_d2(s):
    q = s * s - s
    dq = 2.0 * q * (2.0 * s - 1.0)
    d2q = 2.0 * (2.0 * s - 1.0) ** 2 + 4.0 * q
    return (d2q + dq * dq) * np.exp(q * q) + 0.5 * np.pi ** 2 * np.cos(np.pi * s)


CUBIC = RampShape("cubic", _cubic, _cubic_d, _cubic_d2)
QUINTIC = RampShape("quintic", _quintic, _quintic_d, _quintic_d2,
                    smoothness_order=2)
SINE_SQUARED = RampShape("sine_squared", _sine_sq, _sine_sq_d, _sine_sq_d2)
QUARTIC = RampShape("quartic", _quartic, _quartic_d, _quartic_d2)
EXP_CUBIC = RampShape("exp_cubic", _exp_cubic, _exp_cubic_d, _exp_cubic_d2)
EXP_QUARTIC = RampShape("exp_quartic", _exp_quartic, _exp_quartic_d,
                        _exp_quartic_d2)

SHAPES = {s.name: s for s in
          (CUBIC, QUINTIC, SINE_SQUARED, QUARTIC, EXP_CUBIC, EXP_QUARTIC)}

# Library ordering mirrors the published five-variant comparison tables.
LIBRARY_SHAPE_ORDER = ("sine_squared", "cubic", "quartic",
                       "exp_cubic", "exp_quartic")


class Ramp:
    """Piecewise blending function F(t) with knots T_p < T_f.

    kind: "gradual" (saturates at the interval end), "rapid" (saturates at
    T_p + (T - T_p)/M), "adaptive" (trainable T_f), or "custom".
    """

    def __init__(self, T_p, T_f, shape=CUBIC, kind="custom", meta=None,
                 validate=True):
        if not (T_f > T_p):
            raise ControlFunctionError(
                f"saturation time T_f={T_f} must exceed start knot T_p={T_p}")
        self.T_p = float(T_p)
        self.T_f = float(T_f)
        self.shape = shape
        self.kind = kind
        self.meta = dict(meta or {})
        if validate:
            issues = validate_ramp(self)
            if issues:
                raise ControlFunctionError("; ".join(issues))

    @classmethod
    def gradual(cls, T_p, T, shape=CUBIC):
        return cls(T_p, T, shape, kind="gradual", validate=False)

    @classmethod
    def rapid(cls, T_p, T, M=5, shape=CUBIC):
        if not (isinstance(M, int) and M >= 1):
            raise ControlFunctionError(f"rapid-ramp divisor M={M} must be a "
                                       "positive integer")
        return cls(T_p, T_p + (T - T_p) / M, shape, kind="rapid",
                   meta={"M": M}, validate=False)

    @property
    def smoothness_order(self):
        return self.shape.smoothness_order

    @property
    def tau(self):
        return self.T_f - self.T_p

    def _s(self, t):
        return np.clip((t - self.T_p) / self.tau, 0.0, 1.0)

    def __call__(self, t):
        return self.eval(t)[0]

    def eval(self, t):
        """F(t), F'(t), F''(t); right-hand piece at the knots."""
        t = np.asarray(t, dtype=np.float64)
        s = self._s(t)
        lo, hi = t < self.T_p, t >= self.T_f
        F = np.where(hi, 1.0, np.where(lo, 0.0, self.shape.p(s)))
        ramp_zone = ~lo & ~hi
        dF = np.where(ramp_zone, self.shape.dp(s) / self.tau, 0.0)
        d2F = np.where(ramp_zone, self.shape.d2p(s) / self.tau ** 2, 0.0)
        return F, dF, d2F

    def eval_left(self, t):
        """F, F', F'' using the left-hand piece at the knots."""
        t = np.asarray(t, dtype=np.float64)
        s = self._s(t)
        lo, hi = t <= self.T_p, t > self.T_f
        F = np.where(hi, 1.0, np.where(lo, 0.0, self.shape.p(s)))
        ramp_zone = ~lo & ~hi
        dF = np.where(ramp_zone, self.shape.dp(s) / self.tau, 0.0)
        d2F = np.where(ramp_zone, self.shape.d2p(s) / self.tau ** 2, 0.0)
        return F, dF, d2F

    def tf_partials(self, t):
        """(dF/dT_f, d(F')/dT_f); zero outside the open ramp zone."""
        t = np.asarray(t, dtype=np.float64)
        s = self._s(t)
        zone = (t >= self.T_p) & (t < self.T_f)
        dp, d2p = self.shape.dp(s), self.shape.d2p(s)
        dF_dTf = np.where(zone, -dp * s / self.tau, 0.0)
        ddF_dTf = np.where(zone, -(d2p * s + dp) / self.tau ** 2, 0.0)
        return dF_dTf, ddF_dTf

    def taylor_coeffs(self, t, k_t, side="right"):
        """Taylor coefficients [F, F', F''/2][:k_t+1] at times t."""
        F, dF, d2F = self.eval(t) if side == "right" else self.eval_left(t)
        return [F, dF, 0.5 * d2F][: k_t + 1]

    def with_tf(self, T_f):
        """Same shape and knot, new saturation time (used by adaptive fits)."""
        return Ramp(self.T_p, float(T_f), self.shape, kind=self.kind,
                    meta=self.meta, validate=False)

    def describe(self):
        return {"kind": self.kind, "shape": self.shape.name,
                "T_p": self.T_p, "T_f": self.T_f, "meta": self.meta}

    def __repr__(self):
        return (f"Ramp({self.kind}/{self.shape.name}, "
                f"T_p={self.T_p:g}, T_f={self.T_f:g})")


def eval_F(ramp, t):
    """(F, F', F'') of a ramp at time t (functional form of Ramp.eval)."""
    return ramp.eval(t)


def eval_F_and_dTf(ramp, t):
    """(F, dF/dt, dF/dT_f) for an adaptive ramp."""
    F, dF, _ = ramp.eval(t)
    dF_dTf, _ = ramp.tf_partials(t)
    return F, dF, dF_dTf


class AdaptiveTf:
    """Trainable saturation time, reparameterized to stay inside (T_p, T).

    T_f = T_p + (T - T_p) * sigmoid(zeta); zeta = 0 puts T_f at the
    midpoint, the initialization used throughout.
    """

    def __init__(self, T_p, T, zeta=0.0):
        if not (T > T_p):
            raise ControlFunctionError(f"interval end T={T} must exceed T_p={T_p}")
        self.T_p = float(T_p)
        self.T = float(T)
        self.zeta = float(zeta)

    @property
    def t_f(self):
        return self.tf_of_zeta(self.zeta)

    def tf_of_zeta(self, zeta):
        sig = 1.0 / (1.0 + np.exp(-zeta))
        return self.T_p + (self.T - self.T_p) * sig

    def dtf_dzeta(self, zeta):
        sig = 1.0 / (1.0 + np.exp(-zeta))
        return (self.T - self.T_p) * sig * (1.0 - sig)


def adaptive_ramp(T_p, T, shape=CUBIC, zeta=0.0):
    """Ramp whose T_f tracks an AdaptiveTf state."""
    state = AdaptiveTf(T_p, T, zeta)
    ramp = Ramp(T_p, state.t_f, shape, kind="adaptive", validate=False)
    ramp.adaptive = state
    return ramp


def ramp_coeff_vars(ramp, t, tf_var, k_t=1):
    """Taylor coefficients of an adaptive ramp as tape nodes.

    `tf_var` is the Var holding the current T_f; the returned [F, F', ...]
    coefficient nodes route their adjoints to it through the analytic
    partials dF/dT_f and d(F')/dT_f.
    """
    live = ramp.with_tf(float(tf_var.value))
    F, dF, d2F = live.eval(t)
    dF_dTf, ddF_dTf = live.tf_partials(t)
    coeffs = [
        Var(F, (tf_var,), (lambda g, p=dF_dTf: np.sum(g * p),)),
        Var(dF, (tf_var,), (lambda g, p=ddF_dTf: np.sum(g * p),)),
    ]
    if k_t >= 2:
        raise ControlFunctionError(
            "adaptive ramps are C1; second time derivatives require a "
            "smoothness_order=2 shape with fixed T_f")
    return coeffs[: k_t + 1]


def validate_ramp(ramp, n_grid=10_000, tol=1e-12, monotone_tol=-1e-15):
    """Invariant suite: endpoint values, C1 (or C2) joins, monotonicity.

    Returns a list of violation messages; monotonicity failures on shapes
    not flagged monotone only produce a warning (the condition is optional).
    """
    issues = []
    shape = ramp.shape
    if abs(float(shape.p(np.float64(0.0)))) > tol:
        issues.append(f"F(T_p) = {float(shape.p(np.float64(0.0))):.3e} != 0")
    if abs(float(shape.p(np.float64(1.0))) - 1.0) > tol:
        issues.append(f"F(T_f) = {float(shape.p(np.float64(1.0))):.3e} != 1")
    for s_end, knot in ((0.0, "T_p"), (1.0, "T_f")):
        d = float(shape.dp(np.float64(s_end))) / ramp.tau
        if abs(d) > tol:
            issues.append(f"F'({knot}) = {d:.3e} != 0 (C1 join broken)")
    if shape.smoothness_order >= 2:
        for s_end, knot in ((0.0, "T_p"), (1.0, "T_f")):
            d2 = float(shape.d2p(np.float64(s_end))) / ramp.tau ** 2
            if abs(d2) > tol:
                issues.append(f"F''({knot}) = {d2:.3e} != 0 (C2 join broken)")
    s = np.linspace(0.0, 1.0, n_grid)
    dmin = float(np.min(shape.dp(s))) / ramp.tau
    if dmin < monotone_tol:
        if shape.monotone:
            issues.append(f"min F' = {dmin:.3e} < 0 on the ramp zone but the "
                          "shape is flagged monotone")
        else:
            warnings.warn(
                f"ramp shape '{shape.name}' is not monotone (min F' = "
                f"{dmin:.3e}); the monotonicity condition is optional",
                stacklevel=2)
    return issues


def custom_ramp(T_p, T_f, p, dp, d2p, name="custom", smoothness_order=1,
                monotone=False):
    """Build and validate a user-supplied ramp; raises on invariant failure."""
    shape = RampShape(name, p, dp, d2p, smoothness_order, monotone)
    return Ramp(T_p, T_f, shape, kind="custom", validate=True)


def appendix_library(T_p=0.5, T=1.0, M=5):
    """The ten built-in ramp variants: five shapes, gradual and rapid.

    The rapid cubic's published polynomial fails the F(T_p) = 0 endpoint
    (it evaluates to -75 there); the entry carries the corrected Hermite
    coefficients and is flagged `corrected` in its metadata.
    """
    lib = {}
    for shape_name in LIBRARY_SHAPE_ORDER:
        shape = SHAPES[shape_name]
        g = Ramp.gradual(T_p, T, shape)
        r = Ramp.rapid(T_p, T, M, shape)
        if shape_name == "cubic":
            r.meta["corrected"] = True
            r.meta["note"] = ("quadratic coefficient rederived from the "
                              "endpoint conditions; published value fails "
                              "F(T_p)=0")
        lib[f"gradual_{shape_name}"] = g
        lib[f"rapid_{shape_name}"] = r
    return lib


@dataclass
class ScheduleLevel:
    t_start: float
    t_end: float
    delta: object        # ParamDelta-like: .weights / .biases lists
    ramp: Ramp


class IntervalSchedule:
    """Base parameters plus frozen, ramp-gated corrections per interval.

    Level 0 is the base parameter set trained on [t0, t1]; each later level
    adds F_i(t) * delta_i.  Restricted to any completed interval the
    effective parameters are exactly independent of all later deltas,
    because their ramps are identically zero there.
    """

    def __init__(self, base, t_start, t_end):
        if not (t_end > t_start):
            raise ControlFunctionError("schedule interval must be increasing")
        self.base = base
        self.t_start = float(t_start)
        self.levels = []
        self.boundaries = [float(t_start), float(t_end)]

    @property
    def t_end(self):
        return self.boundaries[-1]

    def append(self, delta, ramp, t_end):
        """Freeze a trained correction for the interval (current end, t_end]."""
        t_prev = self.t_end
        if not (t_end > t_prev):
            raise ControlFunctionError(
                f"new interval end {t_end} must exceed current end {t_prev}")
        if abs(ramp.T_p - t_prev) > 1e-12:
            raise ControlFunctionError(
                f"ramp start knot {ramp.T_p} must equal the previous "
                f"interval end {t_prev}")
        if ramp.T_f > t_end + 1e-12:
            raise ControlFunctionError(
                f"ramp saturation {ramp.T_f} exceeds the interval end {t_end}")
        self.levels.append(ScheduleLevel(t_prev, float(t_end), delta, ramp))
        self.boundaries.append(float(t_end))

    def check_domain(self, t, allow_extrapolation=False):
        t = np.asarray(t, dtype=np.float64)
        if not allow_extrapolation and np.any(t > self.t_end + 1e-12):
            raise OutOfDomainError(
                f"t up to {float(np.max(t)):g} exceeds the trained horizon "
                f"{self.t_end:g}; pass allow_extrapolation=True to evaluate "
                "anyway")
        return t

    def ramp_values(self, t):
        return [lvl.ramp.eval(t) for lvl in self.levels]

    def stack_eval(self, k, t, active_delta=None, active_ramp=None,
                   allow_extrapolation=False):
        """Effective layer-k parameters and their time derivatives at t.

        Returns (W_eff, b_eff, dW_eff, db_eff).  For t at or below any
        completed interval end, levels beyond that interval contribute
        exact zeros.
        """
        t = self.check_domain(t, allow_extrapolation)
        W = self.base.weights[k].copy()
        b = self.base.biases[k].copy()
        dW = np.zeros_like(W)
        db = np.zeros_like(b)
        pairs = [(lvl.delta, lvl.ramp) for lvl in self.levels]
        if active_delta is not None:
            pairs.append((active_delta, active_ramp))
        for delta, ramp in pairs:
            F, dF, _ = ramp.eval(t)
            F, dF = float(F), float(dF)
            if F != 0.0:
                W += F * delta.weights[k]
                b += F * delta.biases[k]
            if dF != 0.0:
                dW += dF * delta.weights[k]
                db += dF * delta.biases[k]
        return W, b, dW, db

    def saturated_through(self, t_lo):
        """True when every frozen ramp is at its plateau for all t >= t_lo."""
        return all(lvl.ramp.T_f <= t_lo + 1e-12 for lvl in self.levels)

    def collapsed_base(self, t_lo):
        """Base with all ramps saturated at t_lo folded in as constants.

        Valid for evaluating at any t >= t_lo; used when training a new
        interval, where all earlier ramps are identically 1.
        """
        weights = [W.copy() for W in self.base.weights]
        biases = [b.copy() for b in self.base.biases]
        for lvl in self.levels:
            if lvl.ramp.T_f <= t_lo + 1e-12:
                for k in range(len(weights)):
                    weights[k] += lvl.delta.weights[k]
                    biases[k] += lvl.delta.biases[k]
            else:
                raise ControlFunctionError(
                    f"level ending at {lvl.t_end} is not saturated at {t_lo}")
        return type(self.base)(weights, biases)

    def describe(self):
        return {
            "boundaries": list(self.boundaries),
            "levels": [lvl.ramp.describe() for lvl in self.levels],
        }
