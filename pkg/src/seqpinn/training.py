"""Composite PINN loss, Adam and L-BFGS optimizers, and the sequential
interval-by-interval training driver.

Training one interval never touches sample points from earlier intervals:
the history enters only through the frozen parameter stack, whose saturated
blends fold into constant effective base parameters.  The active
correction's parameters (and, for the adaptive method, the saturation-time
reparameterization zeta) are the only tape leaves.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import problems as problems_mod
from .network import (ParamDelta, ParamSet, cross_forward, cross_input,
                      cross_table, xavier_init)
from .ramps import IntervalSchedule, Ramp, SHAPES, adaptive_ramp, ramp_coeff_vars
from .tape import GradTape, Var, value_of


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite or blew past the divergence guard."""

    def __init__(self, message, point=None, report=None):
        super().__init__(message)
        self.point = point
        self.report = report


@dataclass(frozen=True)
class LossWeights:
    """Weights of the supervised and residual loss parts."""

    w_s: float = 1.0
    w_r: float = 1.0

    def __post_init__(self):
        if self.w_s < 0 or self.w_r < 0 or (self.w_s == 0 and self.w_r == 0):
            raise ValueError("loss weights must be nonnegative and not both zero")


@dataclass
class TrainConfig:
    """Optimization schedule: Adam warmup, then L-BFGS until convergence."""

    adam_epochs: int = 5000
    adam_lr: float = 1e-3
    lbfgs_memory: int = 50
    max_iterations: int = 25000      # total cap, Adam epochs included
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    grad_tol: float = 1e-9           # infinity norm
    loss_rel_tol: float = 1e-12
    counts: tuple = None             # (N_0, N_b, N_r); None = problem default
    strategy: str = "uniform"
    seed: int = 0
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.adam_epochs < 0 or self.max_iterations <= 0:
            raise ValueError("iteration counts must be positive")
        if self.adam_lr <= 0 or self.lbfgs_memory <= 0:
            raise ValueError("adam_lr and lbfgs_memory must be positive")


@dataclass
class TrainReport:
    """Outcome of one interval's training."""

    window: tuple
    final_loss: float
    final_supervised: float
    final_residual: float
    adam_iterations: int
    lbfgs_iterations: int
    termination_reason: str
    wall_time: float
    final_tf: float = None
    loss_history: list = field(default_factory=list)   # (it, total, L_s, L_r, T_f)
    tf_history: list = field(default_factory=list)     # (it, T_f)

    @property
    def iterations(self):
        return self.adam_iterations + self.lbfgs_iterations


@dataclass(frozen=True)
class Method:
    """How an interval extends the schedule.

    kind: "gradual" saturates at the interval end; "rapid" at
    T_p + (T - T_p)/M; "adaptive" trains the saturation time.
    """

    kind: str = "gradual"
    M: int = 5
    shape: str = "cubic"

    def make_ramp(self, T_p, T):
        shape = SHAPES[self.shape]
        if self.kind == "gradual":
            return Ramp.gradual(T_p, T, shape)
        if self.kind == "rapid":
            return Ramp.rapid(T_p, T, self.M, shape)
        if self.kind == "adaptive":
            return adaptive_ramp(T_p, T, shape)
        raise ValueError(f"unknown method kind '{self.kind}'")


class IntervalObjective:
    """Full-batch loss for one interval with precomputed input jets.

    Two modes: training the base network itself (first interval) or a
    zero-initialized correction gated by a ramp (later intervals, against
    a collapsed constant base).
    """

    def __init__(self, problem, embedding, batch, weights, layer_sizes,
                 base=None, ramp=None, adaptive=None):
        self.problem = problem
        self.embedding = embedding
        self.batch = batch
        self.weights = weights
        self.layer_sizes = list(layer_sizes)
        self.base = base
        self.ramp = ramp
        self.adaptive = adaptive
        self.train_base = base is None
        k_x, _ = problem.orders
        self.k_x = k_x
        self.S_res = cross_input(embedding, batch.res_x, batch.res_t, k_x)
        self.need_ux_bc = problem.bc_kind == "periodic_with_derivative"
        bc_kx = 1 if self.need_ux_bc else 0
        self.bc_kx = bc_kx
        if batch.bc_t.size:
            if problem.bc_kind == "dirichlet":
                self.S_bc = cross_input(embedding, batch.bc_x, batch.bc_t,
                                        bc_kx, with_t=False)
            else:
                n = batch.bc_t.size
                self.S_bc_lo = cross_input(embedding, np.full(n, problem.x_lo),
                                           batch.bc_t, bc_kx, with_t=False)
                self.S_bc_hi = cross_input(embedding, np.full(n, problem.x_hi),
                                           batch.bc_t, bc_kx, with_t=False)
        if batch.ic_x.size:
            self.S_ic = cross_input(embedding, batch.ic_x,
                                    np.zeros_like(batch.ic_x), 0, with_t=False)
        if not self.train_base and adaptive is None:
            F, dF = ramp.taylor_coeffs(batch.res_t, 1)
            self.F_res_const = (F.reshape(-1, 1), dF.reshape(-1, 1))
            self.F_bc_const = ramp.taylor_coeffs(batch.bc_t, 0)[0].reshape(-1, 1) \
                if batch.bc_t.size else None

    # -- assembly --------------------------------------------------------

    def _mod_terms(self, dlayers, tf_var):
        """(residual mods, bc mods) for the active correction."""
        if self.train_base:
            return (), ()
        if self.adaptive is None:
            F0, F1 = self.F_res_const
            mods_res = ((F0, F1, dlayers),)
            mods_bc = ((self.F_bc_const, None, dlayers),) \
                if self.F_bc_const is not None else ()
            return mods_res, mods_bc
        F0v, F1v = ramp_coeff_vars(self.ramp, self.batch.res_t, tf_var, k_t=1)
        mods_res = ((F0v.reshape((F0v.shape[0], 1)),
                     F1v.reshape((F1v.shape[0], 1)), dlayers),)
        if self.batch.bc_t.size:
            Fbc = ramp_coeff_vars(self.ramp, self.batch.bc_t, tf_var, k_t=0)[0]
            mods_bc = ((Fbc.reshape((Fbc.shape[0], 1)), None, dlayers),)
        else:
            mods_bc = ()
        return mods_res, mods_bc

    def _losses(self, layers, mods_res, mods_bc):
        batch, problem = self.batch, self.problem
        tab = cross_table(cross_forward(self.S_res, layers, mods_res))
        res = problem.residual_from_table(tab)
        self._check_finite(res, batch.res_x, batch.res_t)
        L_r = (res * res).mean()

        supervised = []
        if batch.ic_x.size:
            u0 = cross_table(cross_forward(self.S_ic, layers, ()))["u"]
            d0 = u0 - batch.ic_target
            supervised.append((d0 * d0).mean())
        if batch.bc_t.size:
            if problem.bc_kind == "dirichlet":
                tb = cross_table(cross_forward(self.S_bc, layers, mods_bc))
                db = tb["u"] - batch.bc_target
                supervised.append((db * db).mean())
            else:
                lo = cross_table(cross_forward(self.S_bc_lo, layers, mods_bc))
                hi = cross_table(cross_forward(self.S_bc_hi, layers, mods_bc))
                dv = lo["u"] - hi["u"]
                supervised.append((dv * dv).mean())
                if self.need_ux_bc:
                    dx = lo["u_x"] - hi["u_x"]
                    supervised.append((dx * dx).mean())
        L_s = supervised[0] if supervised else 0.0
        for term in supervised[1:]:
            L_s = L_s + term
        total = self.weights.w_s * L_s + self.weights.w_r * L_r
        return total, L_s, L_r

    def _check_finite(self, res, xs, ts):
        v = value_of(res)
        if not np.all(np.isfinite(v)):
            i = int(np.argmin(np.isfinite(v)))
            raise TrainingDivergedError(
                f"non-finite residual at point (x={xs[i]:g}, t={ts[i]:g})",
                point=(float(xs[i]), float(ts[i])))

    # -- entry points ------------------------------------------------------

    def loss_and_grad(self, flat):
        """(total, gradient, (L_s, L_r, T_f)) at a flat parameter vector."""
        gt = GradTape()
        tf_var = None
        tf_val = None
        if self.train_base:
            ps = ParamSet.from_flat(flat, self.layer_sizes)
            layers = [(gt.leaf(W), gt.leaf(b))
                      for W, b in zip(ps.weights, ps.biases)]
            dlayers = None
        else:
            if self.adaptive is not None:
                core, zeta = flat[:-1], flat[-1]
            else:
                core = flat
            ds = ParamSet.from_flat(core, self.layer_sizes)
            dlayers = [(gt.leaf(W), gt.leaf(b))
                       for W, b in zip(ds.weights, ds.biases)]
            layers = list(zip(self.base.weights, self.base.biases))
            if self.adaptive is not None:
                zeta_var = gt.leaf(zeta)
                span = self.adaptive.T - self.adaptive.T_p
                sig = 1.0 / (1.0 + (-1.0 * zeta_var).exp())
                tf_var = self.adaptive.T_p + span * sig
                tf_val = float(tf_var.value)
        mods_res, mods_bc = self._mod_terms(dlayers, tf_var)
        total, L_s, L_r = self._losses(layers, mods_res, mods_bc)
        if isinstance(total, Var):
            grads = gt.gradient(total)
            flat_grad = np.concatenate([np.ravel(g) for g in grads])
        else:
            flat_grad = np.zeros_like(flat)
        return (float(value_of(total)), flat_grad,
                (float(value_of(L_s)), float(value_of(L_r)), tf_val))

    def evaluate(self, flat):
        """Loss components without gradients (plain ndarray pass)."""
        tf_val = None
        if self.train_base:
            ps = ParamSet.from_flat(flat, self.layer_sizes)
            layers = list(zip(ps.weights, ps.biases))
            mods_res = mods_bc = ()
        else:
            if self.adaptive is not None:
                core, zeta = flat[:-1], flat[-1]
                tf_val = self.adaptive.tf_of_zeta(zeta)
                live = self.ramp.with_tf(tf_val)
            else:
                core = flat
                live = self.ramp
            ds = ParamSet.from_flat(core, self.layer_sizes)
            dlayers = list(zip(ds.weights, ds.biases))
            layers = list(zip(self.base.weights, self.base.biases))
            F, dF = live.taylor_coeffs(self.batch.res_t, 1)
            mods_res = ((F.reshape(-1, 1), dF.reshape(-1, 1), dlayers),)
            mods_bc = ()
            if self.batch.bc_t.size:
                Fbc = live.taylor_coeffs(self.batch.bc_t, 0)[0].reshape(-1, 1)
                mods_bc = ((Fbc, None, dlayers),)
        total, L_s, L_r = self._losses(layers, mods_res, mods_bc)
        return (float(value_of(total)), float(value_of(L_s)),
                float(value_of(L_r)), tf_val)


def composite_loss(objective, flat):
    """(total, L_s, L_r) of an IntervalObjective at a parameter vector."""
    total, L_s, L_r, _ = objective.evaluate(flat)
    return total, L_s, L_r


# -- Adam ---------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, params):
        return cls(np.zeros_like(params), np.zeros_like(params))


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns the new parameter vector."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


# -- L-BFGS with strong Wolfe line search ---------------------------------

@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad_inf: float
    iterations: int
    reason: str
    n_evals: int
    aux: tuple = None


def _two_loop(g, mem, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    q *= gamma
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * (y @ q)
        q += s * (a - b)
    return q


def _cubic_min(a, fa, dfa, b, fb, dfb):
    """Minimizer of the cubic Hermite interpolant on [a, b]."""
    d1 = dfa + dfb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - dfa * dfb
    if disc < 0.0:
        return None
    d2 = np.sqrt(disc) * np.sign(b - a)
    denom = dfb - dfa + 2.0 * d2
    if denom == 0.0:
        return None
    return b - (b - a) * (dfb + d2 - d1) / denom


def _zoom(fun, x, d, f0, dphi0, a_lo, f_lo, dphi_lo, a_hi, f_hi, dphi_hi,
          c1, c2, max_iter=30):
    evals = 0
    for _ in range(max_iter):
        width = a_hi - a_lo
        a = _cubic_min(a_lo, f_lo, dphi_lo, a_hi, f_hi, dphi_hi)
        lo, hi = (a_lo, a_hi) if width > 0 else (a_hi, a_lo)
        margin = 0.1 * abs(width)
        if a is None or not (lo + margin <= a <= hi - margin):
            a = 0.5 * (a_lo + a_hi)
        f, g, aux = fun(x + a * d)
        evals += 1
        dphi = g @ d
        if f > f0 + c1 * a * dphi0 or f >= f_lo:
            a_hi, f_hi, dphi_hi = a, f, dphi
        else:
            if abs(dphi) <= -c2 * dphi0:
                return a, f, g, aux, evals, True
            if dphi * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi, dphi_hi = a_lo, f_lo, dphi_lo
            a_lo, f_lo, dphi_lo = a, f, dphi
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
    return a_lo, f_lo, None, None, evals, False


def _strong_wolfe(fun, x, f0, g0, d, c1, c2, alpha0=1.0, alpha_max=1e10,
                  max_evals=25):
    """Line search satisfying the strong Wolfe conditions.

    Returns (alpha, f, g, aux, n_evals, ok).
    """
    dphi0 = g0 @ d
    if dphi0 >= 0.0:
        return None, f0, g0, None, 0, False
    a_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    a = alpha0
    evals = 0
    for i in range(max_evals):
        f, g, aux = fun(x + a * d)
        evals += 1
        dphi = g @ d
        if f > f0 + c1 * a * dphi0 or (i > 0 and f >= f_prev):
            out = _zoom(fun, x, d, f0, dphi0, a_prev, f_prev, dphi_prev,
                        a, f, dphi, c1, c2)
            return out[0], out[1], out[2], out[3], evals + out[4], out[5]
        if abs(dphi) <= -c2 * dphi0:
            return a, f, g, aux, evals, True
        if dphi >= 0.0:
            out = _zoom(fun, x, d, f0, dphi0, a, f, dphi,
                        a_prev, f_prev, dphi_prev, c1, c2)
            return out[0], out[1], out[2], out[3], evals + out[4], out[5]
        a_prev, f_prev, dphi_prev = a, f, dphi
        a = min(2.0 * a, alpha_max)
    return None, f_prev, None, None, evals, False


def lbfgs_minimize(fun, x0, config, max_iterations=None, callback=None):
    """Limited-memory BFGS with two-loop recursion and strong Wolfe search.

    `fun(x)` returns (loss, gradient, aux).  Terminates on the gradient
    infinity-norm tolerance, relative loss change, iteration cap, or line
    search failure; the reason is recorded and the best iterate returned.
    """
    max_iter = config.max_iterations if max_iterations is None else max_iterations
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g, aux = fun(x)
    n_evals = 1
    best = (f, x.copy(), g.copy(), aux)
    mem = []
    gamma = 1.0
    reason = "max_iterations"
    it = 0
    while it < max_iter:
        ginf = float(np.max(np.abs(g))) if g.size else 0.0
        if ginf <= config.grad_tol:
            reason = "gradient_tolerance"
            break
        d = -_two_loop(g, mem, gamma)
        if g @ d >= 0.0:
            mem.clear()
            d = -g
        alpha0 = 1.0 if mem else min(1.0, 1.0 / max(ginf, 1e-12))
        a, f_new, g_new, aux_new, evals, ok = _strong_wolfe(
            fun, x, f, g, d, config.wolfe_c1, config.wolfe_c2, alpha0)
        n_evals += evals
        if not ok or a is None or g_new is None:
            reason = "line_search_failure"
            break
        s = a * d
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
            if len(mem) > config.lbfgs_memory:
                mem.pop(0)
            gamma = sy / (y @ y)
        x = x + s
        improvement = f - f_new
        f, g, aux = f_new, g_new, aux_new
        it += 1
        if f < best[0]:
            best = (f, x.copy(), g.copy(), aux)
        if callback is not None:
            callback(it, x, f, g, aux)
        if improvement <= config.loss_rel_tol * max(abs(f), abs(f_new), 1.0):
            reason = "loss_tolerance"
            break
    f_best, x_best, g_best, aux_best = best
    return LbfgsResult(x=x_best, f=f_best,
                       grad_inf=float(np.max(np.abs(g_best))) if g_best.size else 0.0,
                       iterations=it, reason=reason, n_evals=n_evals,
                       aux=aux_best)


# -- interval drivers -----------------------------------------------------

def _interval_seeds(seed, index):
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(max(index + 1, 1) * 2)
    init = children[2 * index].generate_state(1)[0]
    samp = children[2 * index + 1].generate_state(1)[0]
    return int(init), int(samp)


def train_interval(problem, window, config, weights=None, embedding=None,
                   schedule=None, method=None, net=None, interval_index=0):
    """Train one time interval and freeze the result into the schedule.

    First interval (schedule None): trains a fresh Xavier-initialized base
    network.  Later intervals: trains a zero-initialized correction gated
    by the method's ramp; only the active level's parameters change, and
    sample points come solely from the window.
    """
    weights = weights or LossWeights()
    embedding = embedding or problem.embedding
    method = method or Method()
    counts = config.counts or problem.counts_default
    t_lo, t_hi = window
    init_seed, sample_seed = _interval_seeds(config.seed, interval_index)
    batch = problems_mod.sample(problem, counts, window,
                                strategy=config.strategy, seed=sample_seed)

    if schedule is None:
        hidden, width = net or problem.net_default
        sizes = [embedding.dim] + [width] * hidden + [1]
        base = xavier_init(sizes, init_seed)
        objective = IntervalObjective(problem, embedding, batch, weights,
                                      sizes)
        x0 = base.flatten()
        ramp = None
        adaptive = None
    else:
        if abs(t_lo - schedule.t_end) > 1e-12:
            raise ValueError(f"window {window} does not start at the "
                             f"schedule end {schedule.t_end}")
        sizes = schedule.base.layer_sizes
        collapsed = schedule.collapsed_base(t_lo)
        ramp = method.make_ramp(t_lo, t_hi)
        adaptive = getattr(ramp, "adaptive", None)
        delta = ParamDelta.zeros_like(schedule.base, adaptive=adaptive)
        objective = IntervalObjective(problem, embedding, batch, weights,
                                      sizes, base=collapsed, ramp=ramp,
                                      adaptive=adaptive)
        x0 = delta.flatten_trainable()

    t_start = time.time()
    history = []
    tf_history = []
    x = x0
    guard = None

    def record(it, total, ls, lr, tf):
        history.append((it, total, ls, lr,
                        tf if tf is not None else
                        (ramp.T_f if ramp is not None else float("nan"))))
        if tf is not None:
            tf_history.append((it, tf))

    def check_guard(total, point=None):
        nonlocal guard
        if guard is None:
            guard = max(abs(total), 1e-30)
        if not np.isfinite(total) or total > config.divergence_factor * guard:
            raise TrainingDivergedError(
                f"loss {total:.3e} exceeded {config.divergence_factor:.0e} x "
                f"initial loss {guard:.3e}", point=point)

    n_adam = min(config.adam_epochs, config.max_iterations)
    state = AdamState.like(x)
    total = ls = lr = float("nan")
    tf_val = None
    for it in range(n_adam):
        total, grad, (ls, lr, tf_val) = objective.loss_and_grad(x)
        check_guard(total)
        record(it, total, ls, lr, tf_val)
        x = adam_step(x, grad, state, config.adam_lr)

    lbfgs_budget = config.max_iterations - n_adam
    if lbfgs_budget > 0:
        def fun(p):
            total, grad, comps = objective.loss_and_grad(p)
            check_guard(total)
            return total, grad, comps

        def cb(it, p, f_val, g_val, comps):
            ls_, lr_, tf_ = comps
            record(n_adam + it - 1, f_val, ls_, lr_, tf_)

        result = lbfgs_minimize(fun, x, config, max_iterations=lbfgs_budget,
                                callback=cb)
        x = result.x
        n_lbfgs = result.iterations
        reason = result.reason
        total, ls, lr, tf_val = objective.evaluate(x)
    else:
        n_lbfgs = 0
        reason = "max_iterations"
        total, ls, lr, tf_val = objective.evaluate(x)

    wall = time.time() - t_start
    report = TrainReport(window=tuple(window), final_loss=total,
                         final_supervised=ls, final_residual=lr,
                         adam_iterations=n_adam, lbfgs_iterations=n_lbfgs,
                         termination_reason=reason, wall_time=wall,
                         final_tf=tf_val, loss_history=history,
                         tf_history=tf_history)

    if schedule is None:
        base = ParamSet.from_flat(x, sizes)
        schedule = IntervalSchedule(base, t_lo, t_hi)
        return schedule, report
    delta.set_trainable(x)
    final_ramp = ramp if adaptive is None else ramp.with_tf(adaptive.t_f)
    if adaptive is not None:
        report.final_tf = adaptive.t_f
    schedule.append(delta, final_ramp, t_hi)
    return schedule, report


def train_sequential(problem, boundaries, config, weights=None,
                     embedding=None, method=None, net=None):
    """Train the intervals [b0,b1], (b1,b2], ... in chronological order.

    Each later interval sees earlier ones only through frozen parameters.
    Returns the final schedule and one report per interval.
    """
    boundaries = [float(b) for b in boundaries]
    if len(boundaries) < 2 or any(b2 <= b1 for b1, b2 in
                                  zip(boundaries, boundaries[1:])):
        raise ValueError(f"interval boundaries {boundaries} must be strictly "
                         "increasing with at least two entries")
    schedule = None
    reports = []
    for i, (lo, hi) in enumerate(zip(boundaries, boundaries[1:])):
        schedule, report = train_interval(
            problem, (lo, hi), config, weights=weights, embedding=embedding,
            schedule=schedule, method=method, net=net, interval_index=i)
        reports.append(report)
    return schedule, reports
