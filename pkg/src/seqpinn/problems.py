"""Benchmark problem definitions and training-point generation.

Each problem is du/dt + N(u) = 0 on a 1-D interval with an initial
condition and either Dirichlet or periodic boundary conditions.  Residual
operators are plain arithmetic over whatever scalar type flows through
(ndarray, tape Var, jet), so the same definition serves training, testing,
and reference validation.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .network import InputEmbedding


class SamplingError(ValueError):
    """Invalid sampling window or counts."""


# -- residual operators ----------------------------------------------------

def residual_allen_cahn(u, u_t, u_xx):
    """u_t - 0.0001 u_xx + 5 u^3 - 5 u."""
    return u_t - 0.0001 * u_xx + 5.0 * u ** 3 - 5.0 * u


def residual_convection(u_t, u_x, beta):
    """u_t + beta u_x."""
    return u_t + beta * u_x


def residual_kdv(u, u_t, u_x, u_xxx):
    """u_t + u u_x + 0.0025 u_xxx."""
    return u_t + u * u_x + 0.0025 * u_xxx


@dataclass(frozen=True)
class PdeProblem:
    """Residual operator, conditions, domain, and per-benchmark defaults."""

    name: str
    x_lo: float
    x_hi: float
    T: float
    residual_from_table: callable
    initial: callable
    bc_kind: str                      # dirichlet | periodic | periodic_with_derivative
    orders: tuple                     # required derivative orders (k_x, k_t)
    bc_value: callable = None         # Dirichlet data B(x, t)
    embedding: InputEmbedding = InputEmbedding("identity")
    net_default: tuple = (4, 50)      # (hidden layers, width)
    counts_default: tuple = (200, 800, 10_000)   # (N_0, N_b, N_r)
    params: dict = field(default_factory=dict)

    @property
    def period(self):
        return self.x_hi - self.x_lo


def allen_cahn():
    return PdeProblem(
        name="allen_cahn",
        x_lo=-1.0, x_hi=1.0, T=1.0,
        residual_from_table=lambda tb: residual_allen_cahn(
            tb["u"], tb["u_t"], tb["u_xx"]),
        initial=lambda x: x ** 2 * np.cos(np.pi * x),
        bc_kind="periodic_with_derivative",
        orders=(2, 1),
        embedding=InputEmbedding("fourier_periodic", period=2.0, harmonics=1),
        net_default=(4, 50),
        counts_default=(200, 800, 10_000),
    )


def convection(beta=40.0):
    return PdeProblem(
        name="convection",
        x_lo=0.0, x_hi=2.0 * np.pi, T=1.0,
        residual_from_table=lambda tb: residual_convection(
            tb["u_t"], tb["u_x"], beta),
        initial=np.sin,
        bc_kind="periodic",
        orders=(1, 1),
        embedding=InputEmbedding("identity"),
        net_default=(4, 100),
        counts_default=(1200, 1200, 10_000),
        params={"beta": float(beta)},
    )


def kdv():
    return PdeProblem(
        name="kdv",
        x_lo=-1.0, x_hi=1.0, T=1.0,
        residual_from_table=lambda tb: residual_kdv(
            tb["u"], tb["u_t"], tb["u_x"], tb["u_xxx"]),
        initial=lambda x: np.cos(np.pi * x),
        bc_kind="periodic_with_derivative",
        orders=(3, 1),
        embedding=InputEmbedding("fourier_periodic", period=2.0, harmonics=1),
        net_default=(3, 30),
        counts_default=(400, 800, 8_000),
    )


PROBLEMS = {"allen_cahn": allen_cahn, "convection": convection, "kdv": kdv}


def make_problem(name, **overrides):
    if name not in PROBLEMS:
        raise SamplingError(f"unknown problem id '{name}'; expected one of "
                            f"{sorted(PROBLEMS)}")
    return PROBLEMS[name](**overrides) if overrides else PROBLEMS[name]()


@dataclass
class SampleBatch:
    """Supervised and residual training points for one time window.

    Initial points exist only when the window starts at t = 0; later
    intervals carry their history through the frozen parameter stack, not
    through supervised data.  Residual times lie strictly inside
    (t_lo, t_hi].
    """

    window: tuple
    ic_x: np.ndarray
    ic_target: np.ndarray
    bc_t: np.ndarray
    bc_x: np.ndarray            # Dirichlet sample locations (else empty)
    bc_target: np.ndarray       # Dirichlet data (else empty)
    res_x: np.ndarray
    res_t: np.ndarray
    seed: int

    @property
    def counts(self):
        return (self.ic_x.size, self.bc_t.size, self.res_x.size)


def sample(problem, counts, window, strategy="uniform", seed=0):
    """Draw a SampleBatch; deterministic for a seed (counter-based Philox).

    counts: (N_0, N_b, N_r).  IC points are only drawn when the window
    starts at zero.  Residual points are uniform in the window by default;
    `strategy="latin"` uses a Latin hypercube over (x, t).
    """
    n0, nb, nr = counts
    t_lo, t_hi = window
    if not (t_hi > t_lo):
        raise SamplingError(f"window {window} must satisfy t_lo < t_hi")
    if min(n0, nb, nr) < 0:
        raise SamplingError(f"counts {counts} must be nonnegative")
    rng = np.random.Generator(np.random.Philox(key=seed))

    if t_lo == 0.0 and n0 > 0:
        ic_x = rng.uniform(problem.x_lo, problem.x_hi, size=n0)
        ic_target = problem.initial(ic_x)
    else:
        ic_x = np.empty(0)
        ic_target = np.empty(0)

    # open at t_lo, closed at t_hi
    bc_t = t_hi - rng.uniform(0.0, t_hi - t_lo, size=nb)
    if problem.bc_kind == "dirichlet":
        bc_x = np.where(rng.uniform(size=nb) < 0.5, problem.x_lo, problem.x_hi)
        bc_target = problem.bc_value(bc_x, bc_t)
    else:
        bc_x = np.empty(0)
        bc_target = np.empty(0)

    if strategy == "uniform":
        res_x = rng.uniform(problem.x_lo, problem.x_hi, size=nr)
        res_t = t_hi - rng.uniform(0.0, t_hi - t_lo, size=nr)
    elif strategy == "latin":
        unit = qmc.LatinHypercube(d=2, seed=rng).random(nr)
        res_x = problem.x_lo + (problem.x_hi - problem.x_lo) * unit[:, 0]
        res_t = t_hi - (t_hi - t_lo) * unit[:, 1]
    else:
        raise SamplingError(f"unknown sampling strategy '{strategy}'")
    return SampleBatch(window=(t_lo, t_hi), ic_x=ic_x, ic_target=ic_target,
                       bc_t=bc_t, bc_x=bc_x, bc_target=bc_target,
                       res_x=res_x, res_t=res_t, seed=seed)


def boundary_loss_terms(problem, batch, u_fn):
    """Squared boundary mismatches for a batch.

    `u_fn(x, t, need_ux)` evaluates the network, returning a table with at
    least `u` (and `u_x` when requested).  Dirichlet gives (u - B)^2;
    periodic gives (u(x_lo) - u(x_hi))^2, plus the matching u_x term for
    periodic_with_derivative.  Arithmetic is generic, so entries may be
    arrays or tape nodes.
    """
    if batch.bc_t.size == 0:
        return []
    if problem.bc_kind == "dirichlet":
        u = u_fn(batch.bc_x, batch.bc_t, False)["u"]
        return [(u - batch.bc_target) ** 2]
    x_lo = np.full(batch.bc_t.shape, problem.x_lo)
    x_hi = np.full(batch.bc_t.shape, problem.x_hi)
    need_ux = problem.bc_kind == "periodic_with_derivative"
    left = u_fn(x_lo, batch.bc_t, need_ux)
    right = u_fn(x_hi, batch.bc_t, need_ux)
    terms = [(left["u"] - right["u"]) ** 2]
    if need_ux:
        terms.append((left["u_x"] - right["u_x"]) ** 2)
    return terms
