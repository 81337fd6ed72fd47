import math

import numpy as np
import pytest

from rspd.algorithms import SolverConfig, arspd, inner_stage, pdsg, rspd, rspd_sc
from rspd.core import ProblemConstants, SaddleProblem
from rspd.errors import ConfigurationError, NumericalFailure
from rspd.geometry import FeasibleSet
from rspd.problems import make_synthetic


class Quadratic1D(SaddleProblem):
    """f(x, y) = a (x - 1)^2 - b (y - 1)^2 + c x y with exact gradients (no kernel)."""

    n_samples = 1
    primal_dim = dual_dim = 1

    def __init__(self, a=1.0, b=1.0, c=0.0, box=None):
        self.a, self.b, self.c = a, b, c
        dom = FeasibleSet.interval(-box, box) if box else FeasibleSet.whole_space(1)
        self.primal_domain = self.dual_domain = dom
        self.constants = ProblemConstants(M=1.0, B=1.0, L=1.0, v=1.0, G=1.0, mu=1.0, c=1.0, theta=0.5)

    def stoch_grad(self, x, y, i):
        return (2 * self.a * (x - 1) + self.c * y, -2 * self.b * (y - 1) + self.c * x)

    def best_response(self, x):
        if self.b == 0:
            return np.zeros(1)
        y = 1 + self.c * np.asarray(x) / (2 * self.b)
        return self.dual_domain.project(np.atleast_1d(y).astype(float))

    def saddle_value(self, x, y):
        return float(self.a * (x[0] - 1) ** 2 - self.b * (y[0] - 1) ** 2 + self.c * x[0] * y[0])

    def primal_objective(self, x):
        return self.saddle_value(x, self.best_response(x))


class Bilinear(Quadratic1D):
    def __init__(self):
        super().__init__(a=0.0, b=0.0, c=1.0, box=1.0)

    def best_response(self, x):
        return np.sign(np.asarray(x, float)) + (np.asarray(x) == 0)


def test_inner_stage_deterministic_recursion():
    pb = Quadratic1D()
    xa, ya = inner_stage(pb, np.zeros(1), np.zeros(1), 100, 0.4, 0.4)
    # direct simulation of the same recursion, averaging x_0..x_{T-1}
    x = y = 0.0
    xs, ys = [], []
    for _ in range(100):
        xs.append(x)
        ys.append(y)
        x, y = x - 0.4 * 2 * (x - 1), y + 0.4 * (-2) * (y - 1)
    assert xa[0] == pytest.approx(np.mean(xs), abs=1e-14)
    assert ya[0] == pytest.approx(np.mean(ys), abs=1e-14)
    assert abs(xa[0] - 1) < 0.1 and abs(ya[0] - 1) < 0.1


def test_inner_stage_stationary_and_pinned():
    pb = Quadratic1D(a=0.0, b=0.0)
    xa, ya = inner_stage(pb, np.array([0.3]), np.array([-0.2]), 50, 1.0, 1.0)
    assert xa[0] == 0.3 and ya[0] == -0.2
    pb = Quadratic1D()
    xa, ya = inner_stage(pb, np.array([0.3]), np.array([-0.2]), 50, 1.0, 1.0, radii=(1e-300, 1e-300))
    assert xa[0] == pytest.approx(0.3, abs=1e-290) and ya[0] == pytest.approx(-0.2, abs=1e-290)


def test_pdsg_examples():
    pb = make_synthetic(10, 5, seed=0)
    res = pdsg(pb, 0, 0.1, 0.1)
    assert np.array_equal(res.final_primal, np.zeros(5)) and len(res.trace) == 1
    bil = Bilinear()
    res = pdsg(bil, 500, 0.3, 0.3, x0=np.array([0.9]))
    assert np.all(np.abs(res.final_primal) <= 1) and np.all(np.abs(res.final_dual) <= 1)
    with pytest.raises(ConfigurationError):
        pdsg(pb, 10, 0.0, 0.1)


def test_pdsg_rate_roughly_inverse_sqrt():
    pb = make_synthetic(10, 5, seed=0)
    T = 10**5
    consts = []
    for seed in range(5):
        res = pdsg(pb, T, 1 / math.sqrt(T), 1 / math.sqrt(T), seed=seed)
        gaps = res.trace.column("objective") - pb.optimal_value
        grads = res.trace.column("gradients")
        late = grads >= T / 4
        consts.append(np.median(gaps[late] * np.sqrt(grads[late])))
    assert max(consts) / min(consts) < 5


def test_rspd_sc_single_stage_and_best_response_count(monkeypatch):
    pb = make_synthetic(10, 5, seed=0)
    calls = []
    orig = type(pb).best_response
    monkeypatch.setattr(type(pb), "best_response", lambda self, x: calls.append(1) or orig(self, x))
    # trace logging evaluates the objective; stub it so only restarts are counted
    monkeypatch.setattr(type(pb), "primal_objective", lambda self, x: 0.0)
    res = rspd_sc(pb, SolverConfig(seed=3, eps0=1.0, S_override=3, T_override=200, log_interval=10**6))
    assert len(calls) == 3 + 1
    assert res.gradients_total == 200 + 400 + 800 and res.stages_completed == 3
    monkeypatch.undo()
    one = rspd_sc(pb, SolverConfig(seed=3, S_override=1, T_override=200))
    sch = one.schedules[0]
    xa, _ = inner_stage(pb, np.zeros(5), pb.best_response(np.zeros(5)), 200, sch.eta_x[0], sch.eta_y[0], seed=3)
    assert np.array_equal(one.final_primal, xa)
    assert np.array_equal(one.final_dual, pb.best_response(xa))


def test_restart_duals_and_feasibility():
    pb = make_synthetic(8, 4, seed=1)
    res = rspd(pb, SolverConfig(seed=0, S_override=4, T_override=500))
    for end in res.stage_ends:
        assert np.allclose(end.y_restart, pb.best_response(end.x_avg), atol=1e-12, rtol=0)
        assert pb.dual_domain.contains(end.y_restart)
    assert res.gradients_total == 4 * 500
    sch = res.schedules[0]
    assert all(ry / rx == pytest.approx(pb.constants.L * pb.constants.G, rel=1e-14)
               for rx, ry in zip(sch.R_x, sch.R_y))


def test_rspd_huge_radius_matches_unconstrained():
    pb = make_synthetic(8, 4, seed=1)
    cfg = SolverConfig(seed=5, S_override=1, T_override=300, R_x1=1e9, eta_x=0.01, eta_y=0.01)
    res = rspd(pb, cfg)
    x0 = np.zeros(4)
    xa, _ = inner_stage(pb, x0, pb.best_response(x0), 300, 0.01, 0.01, seed=5)
    assert np.array_equal(res.final_primal, xa)


def test_arspd_growth_and_accounting():
    pb = make_synthetic(8, 4, seed=1)
    cfg = SolverConfig(seed=0, S_override=2, T_override=100, R_x1=2.0, theta=0.0, kappa=1.0, K_max=3,
                       eta_x=0.01, eta_y=0.01)
    res = arspd(pb, cfg)
    Ts = [s.T[0] for s in res.schedules]
    Rs = [s.R_x[0] for s in res.schedules]
    assert Ts == [100, 400, 1600] and Rs == [2.0, 4.0, 8.0]
    assert res.gradients_total == 2 * sum(Ts)
    assert {r.restart for r in res.trace if r.stage > 0} == {1, 2, 3}
    res = arspd(pb, SolverConfig(seed=0, S_override=2, T_override=100, R_x1=2.0, theta=0.5, K_max=3,
                                 eta_x=0.01, eta_y=0.01))
    assert [s.T[0] for s in res.schedules] == [100, 200, 400]


def test_budget_cuts_run_and_trace_is_monotone():
    pb = make_synthetic(10, 5, seed=0)
    res = rspd_sc(pb, SolverConfig(seed=0, S_override=5, T_override=1000, budget=2500))
    assert res.gradients_total == 2500 and res.stages_completed == 1
    g = res.trace.column("gradients")
    assert np.all(np.diff(g) > 0) and g[-1] == 2500
    stage_records = [r for r in res.trace if r.gradients in (1000,)]
    assert stage_records


def test_monotone_stage_gaps_over_seeds():
    pb = make_synthetic(10, 5, seed=0)
    curves = [
        [o - pb.optimal_value for o in rspd_sc(pb, SolverConfig(seed=s, S_override=4, T_override=20000)).stage_objectives]
        for s in range(10)
    ]
    med = np.median(curves, axis=0)
    assert np.all(np.diff(med) <= 0)


def test_determinism_of_solver_runs():
    pb = make_synthetic(10, 5, seed=0)
    cfg = SolverConfig(seed=11, S_override=3, T_override=700)
    a, b = rspd_sc(pb, cfg, clock=lambda: 0.0), rspd_sc(pb, cfg, clock=lambda: 0.0)
    assert a.trace.records == b.trace.records
    assert np.array_equal(a.final_primal, b.final_primal)


def test_divergence_raises():
    pb = make_synthetic(10, 5, seed=0, op_norm=10)
    with pytest.raises(NumericalFailure):
        pdsg(pb, 10**5, 1e3, 1e3)


def test_solver_config_validation():
    with pytest.raises(ConfigurationError) as err:
        SolverConfig(eps0=1.0, eps_target=2.0, delta=2.0, kappa=0.0, S_override=0)
    assert len(err.value.violations) == 4
    pb = make_synthetic(5, 2, seed=0)
    with pytest.raises(ConfigurationError):
        rspd_sc(pb, SolverConfig())
