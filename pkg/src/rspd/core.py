"""Problem abstraction, problem constants, stage schedules and run traces."""

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, ContractViolation, InvalidAccuracyError

# Constants from the convergence theorems; every one is overridable by callers.
SC_ETA_DIVISOR = 45.0
SC_T_PRIMAL = 405.0
SC_T_DUAL = 810.0
LEB_ETA_DIVISOR = 40.0
LEB_T_BASE = 320.0
LEB_T_PROB = 8192.0


@dataclass(frozen=True)
class ProblemConstants:
    """Regularity constants of a saddle problem.

    M, B bound the primal/dual stochastic subgradient norms; (L, v) are the
    Hölder constants of the gradient of phi; G is the Lipschitz constant of
    the loss map; mu the strong-convexity modulus of P; (c, theta) the local
    error bound constant and exponent.
    """

    M: float
    B: float
    L: float
    v: float
    G: float
    mu: Optional[float] = None
    c: Optional[float] = None
    theta: float = 0.0

    def __post_init__(self):
        bad = []
        for name in ("M", "B", "L", "G"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                bad.append(f"{name} must be finite and > 0, got {val}")
        for name in ("mu", "c"):
            val = getattr(self, name)
            if val is not None and not (np.isfinite(val) and val > 0):
                bad.append(f"{name} must be finite and > 0 when given, got {val}")
        for name in ("v", "theta"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                bad.append(f"{name} must lie in [0, 1], got {val}")
        if bad:
            raise ConfigurationError("invalid problem constants", bad)


class Stage(NamedTuple):
    eta_x: float
    eta_y: float
    T: int
    R_x: Optional[float]
    R_y: Optional[float]
    eps: float


@dataclass(frozen=True)
class StageSchedule:
    """Per-stage step sizes, iteration counts, radii and accuracy targets.

    ``eps[s]`` is the accuracy the (s+1)-th stage is meant to reach, so
    ``eps[0] = eps0 / 2``. Radii are None for the unconstrained (sc) mode.
    """

    mode: str
    eta_x: tuple
    eta_y: tuple
    T: tuple
    eps: tuple
    R_x: Optional[tuple] = None
    R_y: Optional[tuple] = None

    @property
    def S(self):
        return len(self.T)

    @property
    def total_iterations(self):
        return sum(self.T)

    def __getitem__(self, s):
        return Stage(
            self.eta_x[s],
            self.eta_y[s],
            self.T[s],
            None if self.R_x is None else self.R_x[s],
            None if self.R_y is None else self.R_y[s],
            self.eps[s],
        )

    def __iter__(self):
        return (self[s] for s in range(self.S))


def num_stages(eps0, eps):
    """ceil(log2(eps0 / eps)), robust to round-off at exact powers of two."""
    if not (eps0 > 0 and eps > 0):
        raise InvalidAccuracyError(f"accuracies must be positive (eps0={eps0}, eps={eps})")
    if eps >= eps0:
        raise InvalidAccuracyError(f"target accuracy {eps} must be below eps0={eps0}")
    return max(1, math.ceil(math.log2(eps0 / eps) - 1e-12))


def _halvings(first, S, factor=2.0):
    out = [float(first)]
    for _ in range(S - 1):
        out.append(out[-1] / factor)
    return tuple(out)


def make_sc_schedule(constants, eps0, eps, T1_override=None, S=None, eta_x1=None, eta_y1=None):
    """Schedule for the restarted method on strongly convex P.

    T doubles and both step sizes halve from one stage to the next. Step
    sizes start at 2*eps0/(45 M^2) and 2*eps0/(45 B^2) unless overridden.
    """
    if constants.mu is None:
        raise ConfigurationError("strongly convex schedule needs constants.mu")
    n_stages = num_stages(eps0, eps) if S is None else int(S)
    if n_stages < 1:
        raise ConfigurationError(f"number of stages must be >= 1, got {S}")
    M, B, L, G = constants.M, constants.B, constants.L, constants.G
    if T1_override is None:
        T1 = math.ceil(max(SC_T_PRIMAL * M**2, SC_T_DUAL * L**2 * G**2 * B**2) / (constants.mu * eps0))
    else:
        T1 = int(T1_override)
        if T1 < 1:
            raise ConfigurationError(f"T1 must be a positive integer, got {T1_override}")
    eta_x1 = 2.0 * eps0 / (SC_ETA_DIVISOR * M**2) if eta_x1 is None else eta_x1
    eta_y1 = 2.0 * eps0 / (SC_ETA_DIVISOR * B**2) if eta_y1 is None else eta_y1
    return StageSchedule(
        mode="sc",
        eta_x=_halvings(eta_x1, n_stages),
        eta_y=_halvings(eta_y1, n_stages),
        T=tuple(T1 * 2**s for s in range(n_stages)),
        eps=_halvings(eps0 / 2.0, n_stages),
    )


def leb_iterations(constants, R_x1, eps0, S, delta_tilde):
    """Smallest constant T meeting the per-stage requirement at every stage.

    For v < 1 the requirement grows with the stage index, so the max over
    stages is the last stage's value; for v = 1 it is stage independent.
    """
    M, B, L, G, v = constants.M, constants.B, constants.L, constants.G, constants.v
    log_term = math.log(1.0 / delta_tilde)
    worst = 0.0
    for s in range(1, S + 1):
        R = R_x1 / 2 ** (s - 1)
        e = eps0 / 2 ** (s - 1)
        primal = M**2 * R**2 / e**2
        dual = B**2 * L**2 * G ** (2 * v) * R ** (2 * v) / e**2
        worst = max(
            worst,
            LEB_T_BASE * primal,
            LEB_T_BASE * dual,
            LEB_T_PROB * log_term * primal,
            LEB_T_PROB * log_term * dual,
        )
    return math.ceil(worst)


def make_leb_schedule(
    constants,
    eps0,
    eps,
    delta,
    R_x1,
    T_override=None,
    S=None,
    eta_x1=None,
    eta_y1=None,
    check_radius=True,
):
    """Schedule for the ball-constrained restarted method under an error bound.

    T stays constant, step sizes and the primal radius halve, and the dual
    radius shrinks by 2**v per stage from L * G**v * R_x1**v.
    """
    n_stages = num_stages(eps0, eps) if S is None else int(S)
    if n_stages < 1:
        raise ConfigurationError(f"number of stages must be >= 1, got {S}")
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"delta must lie in (0, 1), got {delta}")
    if not R_x1 > 0:
        raise ConfigurationError(f"R_x1 must be positive, got {R_x1}")
    c, theta, v = constants.c, constants.theta, constants.v
    if check_radius and c is not None:
        required = c * eps0 / eps ** (1.0 - theta)
        if R_x1 < required * (1 - 1e-12):
            raise ConfigurationError(
                f"R_x1={R_x1} is below the error-bound requirement c*eps0/eps^(1-theta)={required}"
            )
    if T_override is None:
        T = leb_iterations(constants, R_x1, eps0, n_stages, delta / n_stages)
    else:
        T = int(T_override)
        if T < 1:
            raise ConfigurationError(f"T must be a positive integer, got {T_override}")
    M, B = constants.M, constants.B
    eta_x1 = eps0 / (LEB_ETA_DIVISOR * M**2) if eta_x1 is None else eta_x1
    eta_y1 = eps0 / (LEB_ETA_DIVISOR * B**2) if eta_y1 is None else eta_y1
    R_y1 = constants.L * constants.G**v * R_x1**v
    return StageSchedule(
        mode="leb",
        eta_x=_halvings(eta_x1, n_stages),
        eta_y=_halvings(eta_y1, n_stages),
        T=(T,) * n_stages,
        eps=_halvings(eps0 / 2.0, n_stages),
        R_x=_halvings(R_x1, n_stages),
        R_y=_halvings(R_y1, n_stages, factor=2.0**v),
    )


class AdaptiveCall(NamedTuple):
    R_x1: float
    T: int
    eps0: float


def make_arspd_plan(R_x1, T1, eps0, theta, kappa, K):
    """Per-call (radius, iterations, eps0) for the adaptive outer loop.

    After each call the radius grows by 2**(1 - theta), the inner iteration
    count by 2**(2 (1 - theta)) (rounded up) and eps0 shrinks by kappa.
    """
    if not 0.0 < kappa <= 1.0:
        raise ConfigurationError(f"kappa must lie in (0, 1], got {kappa}")
    if not 0.0 <= theta <= 1.0:
        raise ConfigurationError(f"theta must lie in [0, 1], got {theta}")
    if K < 1:
        raise ConfigurationError(f"need at least one call, got K={K}")
    r_factor = 2.0 ** (1.0 - theta)
    t_factor = 2.0 ** (2.0 * (1.0 - theta))
    calls = [AdaptiveCall(float(R_x1), int(T1), float(eps0))]
    for _ in range(K - 1):
        R, T, e = calls[-1]
        calls.append(AdaptiveCall(R * r_factor, math.ceil(T * t_factor), e * kappa))
    return calls


def running_average(prev_avg, new_point, count_after):
    """Incremental mean: the average of ``count_after`` points given the old one."""
    prev_avg = np.asarray(prev_avg, dtype=np.float64)
    new_point = np.asarray(new_point, dtype=np.float64)
    if prev_avg.shape != new_point.shape:
        raise ContractViolation(f"dimension mismatch: {prev_avg.shape} vs {new_point.shape}")
    if count_after < 1:
        raise ContractViolation(f"count_after must be >= 1, got {count_after}")
    return prev_avg + (new_point - prev_avg) / count_after


class TraceRecord(NamedTuple):
    gradients: int
    seconds: float
    objective: float
    metric: Optional[float]
    stage: int
    restart: Optional[int]


@dataclass
class RunTrace:
    """Time-stamped samples of a run with strictly increasing gradient counts."""

    records: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.gradients <= self.records[-1].gradients:
            if record.gradients == self.records[-1].gradients:
                # same point in the run: the later (boundary) sample wins
                self.records[-1] = record
                return
            raise ContractViolation("trace gradient counts must increase")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name):
        return np.array(
            [np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records],
            dtype=np.float64,
        )


class SaddleProblem:
    """Oracle bundle for min over x, max over y of f(x, y).

    Subclasses provide sample-wise stochastic subgradients, the dual best
    response, the exact primal objective and the feasible sets. A subclass
    may also set ``kernel = (grad_fn, data)`` where ``grad_fn(data, x, y, i)``
    is a numba-compiled version of :meth:`stoch_grad`; solvers then run their
    inner loops compiled.
    """

    n_samples: int
    primal_dim: int
    dual_dim: int
    primal_domain = None
    dual_domain = None
    constants: ProblemConstants
    kernel = None
    # P* when known in closed form
    optimal_value: Optional[float] = None

    def stoch_grad(self, x, y, i):
        raise NotImplementedError

    def full_grad(self, x, y):
        """Exact partial subgradients of f at (x, y) from one pass over the data."""
        raise NotImplementedError

    def saddle_value(self, x, y):
        raise NotImplementedError

    def best_response(self, x):
        raise NotImplementedError

    def primal_objective(self, x):
        raise NotImplementedError

    def initial_point(self):
        return np.zeros(self.primal_dim)

    def lower_bound(self):
        """A value known to be <= P*, used to default eps0."""
        return self.optimal_value if self.optimal_value is not None else 0.0

    def default_eps0(self, x0=None):
        x0 = self.initial_point() if x0 is None else x0
        return float(self.primal_objective(x0) - self.lower_bound())

    def metric(self, x):
        return None


def estimate_constants(problem, n_probes=1000, radius=1.0, seed=0, warn=True):
    """Probe-based estimate of the gradient-norm bounds (M, B).

    Samples primal points uniformly in the ball of ``radius`` around the
    initial point, pairs each with its best response and a random sample
    index, and reports the largest stochastic-gradient norms seen. This is
    a heuristic: the convergence guarantees need true bounds.
    """
    if warn:
        warnings.warn(
            "M and B estimated from random probes; convergence guarantees need true bounds",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    x0 = problem.initial_point()
    d = x0.size
    M = B = 0.0
    for _ in range(n_probes):
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction) or 1.0
        x = x0 + radius * rng.uniform() ** (1.0 / d) * direction
        if problem.primal_domain is not None:
            x = problem.primal_domain.project(x)
        y = problem.best_response(x)
        gx, gy = problem.stoch_grad(x, y, int(rng.integers(problem.n_samples)))
        M = max(M, float(np.linalg.norm(gx)))
        B = max(B, float(np.linalg.norm(gy)))
    tiny = np.finfo(float).tiny
    return max(M, tiny), max(B, tiny)
