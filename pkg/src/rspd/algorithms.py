"""Stochastic primal-dual solvers: the fixed-step baseline (PDSG), the
restarted method for strongly convex P, the ball-constrained restarted
method under a local error bound, and its adaptive outer loop.

All solvers share :class:`_Engine`, which owns the sampler, the gradient
counter, the budget and the trace.
"""

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit

from .core import (
    LEB_T_BASE,
    LEB_T_PROB,
    RunTrace,
    StageSchedule,
    TraceRecord,
    make_arspd_plan,
    make_leb_schedule,
    make_sc_schedule,
    num_stages,
)
from .data import UniformSampler
from .errors import ConfigurationError, NumericalFailure
from .geometry import _project_in_ball

LOG_POINTS_PER_STAGE = 50


@dataclass(frozen=True)
class SolverConfig:
    """Settings shared by the restarted solvers.

    ``eps0`` defaults to the problem's own bound on P(x0) - P*; ``eps_target``
    defaults to eps0 / 2**S when ``S_override`` is given. ``eta_x``/``eta_y``
    replace the theorem's initial step sizes. ``budget`` caps the number of
    stochastic gradients across the whole run.
    """

    seed: int = 0
    eps0: Optional[float] = None
    eps_target: Optional[float] = None
    delta: float = 0.1
    S_override: Optional[int] = None
    T_override: Optional[int] = None
    R_x1: Optional[float] = None
    kappa: float = 1.0
    K_max: Optional[int] = None
    log_interval: Optional[int] = None
    theta: Optional[float] = None
    eta_x: Optional[float] = None
    eta_y: Optional[float] = None
    budget: Optional[int] = None

    def __post_init__(self):
        bad = []
        if self.eps0 is not None and not self.eps0 > 0:
            bad.append(f"eps0 must be > 0, got {self.eps0}")
        if self.eps_target is not None and not self.eps_target > 0:
            bad.append(f"eps_target must be > 0, got {self.eps_target}")
        if self.eps0 is not None and self.eps_target is not None and self.eps_target >= self.eps0:
            bad.append(f"eps_target ({self.eps_target}) must be below eps0 ({self.eps0})")
        if not 0.0 < self.delta < 1.0:
            bad.append(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.kappa <= 1.0:
            bad.append(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.theta is not None and not 0.0 <= self.theta <= 1.0:
            bad.append(f"theta must lie in [0, 1], got {self.theta}")
        for name in ("S_override", "T_override", "K_max", "log_interval"):
            val = getattr(self, name)
            if val is not None and (int(val) != val or val < 1):
                bad.append(f"{name} must be a positive integer, got {val}")
        for name in ("R_x1", "eta_x", "eta_y"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                bad.append(f"{name} must be > 0, got {val}")
        if self.budget is not None and (int(self.budget) != self.budget or self.budget < 0):
            bad.append(f"budget must be a nonnegative integer, got {self.budget}")
        if bad:
            raise ConfigurationError("invalid solver configuration", bad)


@dataclass
class StageEnd:
    """State at a stage boundary: the stage average and the restarted dual."""

    stage: int
    x_avg: np.ndarray
    y_restart: np.ndarray
    objective: float
    gradients: int
    restart: Optional[int] = None


@dataclass
class SolverResult:
    final_primal: np.ndarray
    final_dual: np.ndarray
    trace: RunTrace
    stages_completed: int
    gradients_total: int
    stage_ends: list = field(default_factory=list)
    schedules: list = field(default_factory=list)

    @property
    def stage_objectives(self):
        return [e.objective for e in self.stage_ends]


@njit(cache=True)
def _advance(grad_fn, data, x, y, xbar, ybar, k, idx, eta_x, eta_y, xdom, xbc, xbr, ydom, ybc, ybr):
    # xbar/ybar are updated in place; averages cover iterates before each update
    for t in range(idx.shape[0]):
        k += 1
        xbar += (x - xbar) / k
        ybar += (y - ybar) / k
        gx, gy = grad_fn(data, x, y, idx[t])
        xn, sx, rx = _project_in_ball(xdom, xbc, xbr, x - eta_x * gx)
        if sx:
            return x, y, k, 1, rx
        yn, sy, ry = _project_in_ball(ydom, ybc, ybr, y + eta_y * gy)
        if sy:
            return x, y, k, 1, ry
        x = xn
        y = yn
    return x, y, k, 0, 0.0


class _Engine:
    """Mutable state of one run: sampler, gradient counter, budget, trace."""

    def __init__(self, problem, seed, budget=None, log_interval=None, clock=time.perf_counter):
        self.problem = problem
        self.sampler = UniformSampler(problem.n_samples, seed)
        self.budget = budget
        self.log_interval = log_interval
        self.clock = clock
        self.gradients = 0
        self.trace = RunTrace()
        self.t0 = clock()
        self.use_kernel = problem.kernel is not None
        self._xdom = problem.primal_domain.kernel_spec()
        self._ydom = problem.dual_domain.kernel_spec()

    @property
    def exhausted(self):
        return self.budget is not None and self.gradients >= self.budget

    def log(self, x, stage, restart=None):
        obj = float(self.problem.primal_objective(x))
        metric = self.problem.metric(x)
        self.trace.append(
            TraceRecord(
                self.gradients,
                float(self.clock() - self.t0),
                obj,
                None if metric is None else float(metric),
                stage,
                restart,
            )
        )
        return obj

    def _steps_python(self, x, y, xbar, ybar, k, idx, eta_x, eta_y, xbc, xbr, ybc, ybr):
        grad = self.problem.stoch_grad
        for i in idx:
            k += 1
            xbar += (x - xbar) / k
            ybar += (y - ybar) / k
            gx, gy = grad(x, y, int(i))
            xn, sx, rx = _project_in_ball(self._xdom, xbc, xbr, x - eta_x * gx)
            if sx:
                return x, y, k, 1, rx
            yn, sy, ry = _project_in_ball(self._ydom, ybc, ybr, y + eta_y * gy)
            if sy:
                return x, y, k, 1, ry
            x, y = xn, yn
        return x, y, k, 0, 0.0

    def stage(self, x0, y0, T, eta_x, eta_y, radii=None, stage=1, restart=None, log=True):
        """Run up to T projected steps from (x0, y0).

        Returns ``(x_avg, y_avg, steps_done)``; fewer than T steps are done
        only when the gradient budget runs out.
        """
        x = np.array(x0, dtype=np.float64)
        y = np.array(y0, dtype=np.float64)
        xbar = x.copy()
        ybar = y.copy()
        if radii is None:
            xbc, xbr, ybc, ybr = x.copy(), np.inf, y.copy(), np.inf
        else:
            xbc, xbr, ybc, ybr = x.copy(), float(radii[0]), y.copy(), float(radii[1])
        interval = self.log_interval or max(1, T // LOG_POINTS_PER_STAGE)
        k = 0
        while k < T and not self.exhausted:
            chunk = min(interval - k % interval, T - k)
            if self.budget is not None:
                chunk = min(chunk, self.budget - self.gradients)
            idx = self.sampler.draw(chunk)
            if self.use_kernel:
                grad_fn, data = self.problem.kernel
                x, y, k, status, residual = _advance(
                    grad_fn, data, x, y, xbar, ybar, k, idx, eta_x, eta_y,
                    self._xdom, xbc, xbr, self._ydom, ybc, ybr,
                )
            else:
                x, y, k, status, residual = self._steps_python(
                    x, y, xbar, ybar, k, idx, eta_x, eta_y, xbc, xbr, ybc, ybr
                )
            if status:
                raise NumericalFailure("ball-constrained projection failed", residual)
            self.gradients += chunk
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                raise NumericalFailure("iterates became non-finite; step size too large?")
            if log and (k % interval == 0 or k == T or self.exhausted):
                self.log(xbar, stage, restart)
        return xbar, ybar, k


def inner_stage(problem, x0, y0, T, eta_x, eta_y, radii=None, seed=0):
    """T projected stochastic primal-dual steps from (x0, y0).

    With ``radii = (R_x, R_y)`` the iterates are also kept in balls centred
    at x0 and y0. Returns the averages of the iterates x_0..x_{T-1} and
    y_0..y_{T-1}.
    """
    engine = _Engine(problem, seed)
    x_avg, y_avg, _ = engine.stage(x0, y0, T, eta_x, eta_y, radii=radii, log=False)
    return x_avg, y_avg


def _start(problem, x0=None):
    x = problem.initial_point() if x0 is None else np.array(x0, dtype=np.float64)
    return x, problem.best_response(x)


def pdsg(problem, steps, eta_x, eta_y, seed=0, x0=None, log_interval=None, clock=time.perf_counter):
    """Fixed-step stochastic primal-dual subgradient method, no restarts.

    Starts from the problem's initial point and its best response; returns
    the uniform averages of the iterates.
    """
    if not (eta_x > 0 and eta_y > 0):
        raise ConfigurationError("step sizes must be positive")
    x, y = _start(problem, x0)
    interval = log_interval or max(1, steps // LOG_POINTS_PER_STAGE)
    engine = _Engine(problem, seed, log_interval=interval, clock=clock)
    engine.log(x, 0)
    if steps > 0:
        x, y, _ = engine.stage(x, y, steps, eta_x, eta_y, stage=1)
    return SolverResult(x, y, engine.trace, 1 if steps > 0 else 0, engine.gradients)


def _resolve_accuracy(problem, config, x0):
    eps0 = config.eps0 if config.eps0 is not None else problem.default_eps0(x0)
    if not eps0 > 0:
        raise ConfigurationError(f"eps0 must be positive, got {eps0}; pass it explicitly")
    eps = config.eps_target
    if eps is None:
        if config.S_override is None:
            raise ConfigurationError("give eps_target or S_override")
        eps = eps0 / 2.0**config.S_override
    if eps >= eps0:
        raise ConfigurationError(f"eps_target ({eps}) must be below eps0 ({eps0})")
    return eps0, eps


def _run_schedule(engine, problem, schedule, x, y, restart=None, result=None):
    """Stage loop shared by the restarted solvers; returns the final (x, y)."""
    use_radii = schedule.R_x is not None
    for s, st in enumerate(schedule, start=1):
        if engine.exhausted:
            break
        radii = (st.R_x, st.R_y) if use_radii else None
        x_avg, _, done = engine.stage(x, y, st.T, st.eta_x, st.eta_y, radii=radii, stage=s, restart=restart)
        x = x_avg
        y = problem.best_response(x)
        if done == st.T:
            result.stages_completed += 1
            result.stage_ends.append(
                StageEnd(s, x.copy(), y.copy(), engine.trace[-1].objective, engine.gradients, restart)
            )
    return x, y


def _new_result(x, y, engine):
    return SolverResult(x, y, engine.trace, 0, 0)


def rspd_sc(problem, config, x0=None, clock=time.perf_counter):
    """Restarted stochastic primal-dual method for strongly convex P.

    Each stage restarts the primal at the previous stage average and the
    dual at its best response; step sizes halve and T doubles per stage.
    """
    if problem.constants.mu is None:
        raise ConfigurationError("rspd_sc needs a strongly convex problem (constants.mu)")
    x, y = _start(problem, x0)
    eps0, eps = _resolve_accuracy(problem, config, x)
    schedule = make_sc_schedule(
        problem.constants, eps0, eps,
        T1_override=config.T_override, S=config.S_override,
        eta_x1=config.eta_x, eta_y1=config.eta_y,
    )
    engine = _Engine(problem, config.seed, config.budget, config.log_interval, clock)
    engine.log(x, 0)
    result = _new_result(x, y, engine)
    result.schedules.append(schedule)
    x, y = _run_schedule(engine, problem, schedule, x, y, result=result)
    result.final_primal, result.final_dual = x, y
    result.gradients_total = engine.gradients
    return result


def _initial_radius(problem, config, eps0, eps):
    if config.R_x1 is not None:
        return config.R_x1
    c = problem.constants.c
    if c is None:
        raise ConfigurationError("R_x1 is required when the error-bound constant c is unknown")
    theta = problem.constants.theta if config.theta is None else config.theta
    return c * eps0 / eps ** (1.0 - theta)


def rspd(problem, config, x0=None, clock=time.perf_counter):
    """Restarted stochastic primal-dual method with shrinking balls.

    Iterates of stage s stay within R_x(s) (primal) and R_y(s) (dual) of the
    stage's starting point; T is constant across stages.
    """
    x, y = _start(problem, x0)
    eps0, eps = _resolve_accuracy(problem, config, x)
    R_x1 = _initial_radius(problem, config, eps0, eps)
    constants = problem.constants
    if config.theta is not None:
        constants = replace(constants, theta=config.theta)
    schedule = make_leb_schedule(
        constants, eps0, eps, config.delta, R_x1,
        T_override=config.T_override, S=config.S_override,
        eta_x1=config.eta_x, eta_y1=config.eta_y,
    )
    engine = _Engine(problem, config.seed, config.budget, config.log_interval, clock)
    engine.log(x, 0)
    result = _new_result(x, y, engine)
    result.schedules.append(schedule)
    x, y = _run_schedule(engine, problem, schedule, x, y, result=result)
    result.final_primal, result.final_dual = x, y
    result.gradients_total = engine.gradients
    return result


def adaptive_T1(constants, R_x1, eps0, S, delta):
    """Initial inner iteration count for the adaptive loop (v = 1 setting)."""
    M, B, L, G = constants.M, constants.B, constants.L, constants.G
    log_term = math.log(S * (S + 1) / delta)
    base = max(
        LEB_T_BASE * M**2,
        LEB_T_BASE * B**2 * L**2 * G**2,
        LEB_T_PROB * log_term * M**2,
        LEB_T_PROB * log_term * B**2 * L**2 * G**2,
    )
    return math.ceil(base * R_x1**2 / eps0**2)


def arspd(problem, config, x0=None, clock=time.perf_counter):
    """Adaptive restarted method: repeated ``rspd`` calls with growing radius.

    Call k+1 warm-starts from call k's output with radius times 2**(1-theta),
    T times 2**(2(1-theta)) and eps0 times kappa. ``theta`` defaults to 0.
    The dual of every call restarts at the best response of its start point.
    """
    x, y = _start(problem, x0)
    eps0, eps = _resolve_accuracy(problem, config, x)
    theta = 0.0 if config.theta is None else config.theta
    S = config.S_override if config.S_override is not None else num_stages(eps0, eps)
    R1 = _initial_radius(problem, config, eps0, eps)
    T1 = config.T_override if config.T_override is not None else adaptive_T1(
        problem.constants, R1, eps0, S, config.delta
    )
    K = config.K_max if config.K_max is not None else num_stages(eps0, eps) + 1
    plan = make_arspd_plan(R1, T1, eps0, theta, config.kappa, K)
    constants = replace(problem.constants, theta=theta)
    engine = _Engine(problem, config.seed, config.budget, config.log_interval, clock)
    engine.log(x, 0)
    result = _new_result(x, y, engine)
    for k, call in enumerate(plan, start=1):
        if engine.exhausted:
            break
        scale = call.eps0 / eps0
        schedule = make_leb_schedule(
            constants, call.eps0, call.eps0 / 2.0**S, config.delta, call.R_x1,
            T_override=call.T, S=S,
            eta_x1=None if config.eta_x is None else config.eta_x * scale,
            eta_y1=None if config.eta_y is None else config.eta_y * scale,
            check_radius=False,
        )
        result.schedules.append(schedule)
        y = problem.best_response(x)
        x, y = _run_schedule(engine, problem, schedule, x, y, restart=k, result=result)
    result.final_primal, result.final_dual = x, y
    result.gradients_total = engine.gradients
    return result


SOLVERS = {"rspd_sc": rspd_sc, "rspd": rspd, "arspd": arspd}
