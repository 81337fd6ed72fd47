import numpy as np
import pytest
import scipy.sparse as sp

import oracles
from rspd.data import SparseDataset, synthetic_binary_dataset
from rspd.errors import ContractViolation, DegenerateProblemError
from rspd.geometry import project_simplex
from rspd.problems import (
    AucProblem,
    DroProblem,
    auc_best_response,
    auc_metric,
    auc_primal_objective,
    auc_stoch_grad,
    dro_best_response,
    dro_loss_vector,
    dro_primal_objective,
    dro_stoch_grad,
    make_synthetic,
)


def dro(X, labels, **kw):
    kw.setdefault("M", 1.0)
    kw.setdefault("B", 1.0)
    return DroProblem(SparseDataset(sp.csr_matrix(np.asarray(X, float)), np.asarray(labels)), **kw)


def test_dro_losses():
    pb = dro([[2.0], [0.5]], [1, -1])
    assert np.array_equal(dro_loss_vector(pb, [0.0]), [1, 1])
    assert np.allclose(dro_loss_vector(pb, [1.0]), [0, 1.5])


def test_dro_best_response_examples():
    pb = dro(np.eye(3), [1, 1, 1])
    # constant losses give the uniform weights
    assert np.allclose(dro_best_response(pb, np.zeros(3)), np.ones(3) / 3)
    pb = dro([[1.0], [2.0], [-1.0]], [1, 1, 1], lambda1=1e9)
    assert np.allclose(dro_best_response(pb, [0.7]), np.ones(3) / 3, atol=1e-8)


def test_dro_best_response_grid_instance():
    # l = [3, 1, 0] with lambda1 = 1: hinge losses of x = 0 after scaling rows
    pb = dro([[-2.0], [0.0], [1.0]], [1, 1, 1], lambda1=1.0)
    x = np.array([1.0])
    assert np.allclose(pb.losses(x), [3, 1, 0])
    y = dro_best_response(pb, x)
    ours = float(y @ pb.losses(x)) - pb._divergence(y)
    assert abs(ours - oracles.dro_grid_best_value([3, 1, 0], 1.0)) <= 1e-6
    assert abs(dro_primal_objective(pb, x) - (ours + 0.5 * pb.lambda2)) < 1e-12


def test_dro_best_response_beats_random_weights():
    rng = np.random.default_rng(0)
    for n in range(2, 7):
        pb = dro(rng.normal(size=(n, 3)), np.where(rng.random(n) < 0.5, 1, -1))
        x = rng.normal(size=3)
        y = pb.best_response(x)
        best = float(y @ pb.losses(x)) - pb._divergence(y)
        for _ in range(1000):
            z = rng.dirichlet(np.ones(n) * rng.uniform(0.1, 3))
            assert best >= float(z @ pb.losses(x)) - pb._divergence(z) - 1e-9


def test_dro_primal_objective_examples():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 4))
    pb = dro(X, [1, -1, 1, 1, -1, -1])
    assert pb.primal_objective(np.zeros(4)) == pytest.approx(1.0, abs=1e-15)
    big = dro(X, [1, -1, 1, 1, -1, -1], lambda1=1e10)
    x = rng.normal(size=4)
    assert big.primal_objective(x) == pytest.approx(big.losses(x).mean() + 0.5 * big.lambda2 * x @ x, rel=1e-6)


def test_dro_stoch_grad_examples():
    pb = dro([[3.0, 0.0], [0.0, 3.0]], [1, 1], lambda2=0.5)
    x = np.array([1.0, 1.0])
    y = np.array([0.5, 0.5])
    for i in range(2):
        gx, _ = dro_stoch_grad(pb, x, y, i)
        assert np.allclose(gx, 0.5 * x)  # margins 3 > 1: hinge inactive
    pb = dro([[1.0], [-0.2]], [1, 1], lambda1=0.3)
    x = np.array([0.5])
    y = np.array([0.7, 0.3])
    _, gy = pb.full_grad(x, y)
    l = pb.losses(x)
    assert np.allclose(gy, l - 0.3 * 2 * (2 * y - 1))
    mean_gy = (dro_stoch_grad(pb, x, y, 0)[1] + dro_stoch_grad(pb, x, y, 1)[1]) / 2
    assert np.allclose(mean_gy, gy, atol=1e-14)
    with pytest.raises(ContractViolation):
        dro_stoch_grad(pb, x, y, 2)


def test_dro_kinks_use_zero_subgradient():
    pb = dro([[1.0, 0.0]], [1], lambda2=2.0, regularizer="l1")
    gx, _ = pb.stoch_grad(np.array([1.0, 0.0]), np.array([1.0]), 0)
    # margin exactly 1 -> hinge part 0; sign(0) = 0
    assert np.array_equal(gx, [2.0, 0.0])


def test_dro_l1_piecewise_quadratic_slices():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(5, 3))
    pb = dro(X, [1, -1, 1, -1, 1], regularizer="l1")
    for _ in range(100):
        x0, dvec = rng.normal(size=(2, 3))
        ts = np.linspace(-1, 1, 401)
        vals = np.array([pb.primal_objective(x0 + t * dvec) for t in ts])
        # convexity along the slice
        second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
        assert second.min() >= -1e-9
        # piecewise quadratic: second differences take few distinct values away from kinks
        levels = np.unique(np.round(second / (ts[1] - ts[0]) ** 2, 6))
        assert len(levels) < 0.5 * len(second)


def test_auc_examples():
    ds = synthetic_binary_dataset(80, 6, seed=0)
    pb = AucProblem(ds, M=1.0, B=1.0)
    p = pb.p
    v0 = np.zeros(pb.primal_dim)
    for i in range(ds.n):
        g, ga = auc_stoch_grad(pb, v0, np.zeros(1), i)
        xi = ds.X[i].toarray().ravel()
        z = ds.labels[i]
        assert g[-2] == 0 and g[-1] == 0 and ga[0] == 0
        expect = 2 * (p * xi * (z == -1) - (1 - p) * xi * (z == 1))
        assert np.allclose(g[:-2], expect, atol=1e-15)
    assert auc_best_response(pb, v0)[0] == 0.0
    rng = np.random.default_rng(0)
    v = rng.normal(size=pb.primal_dim)
    al = 0.3
    mean_ga = np.mean([auc_stoch_grad(pb, v, [al], i)[1][0] for i in range(ds.n)])
    w = v[:-2]
    assert mean_ga == pytest.approx(-2 * p * (1 - p) * al + 2 * p * (1 - p) * w @ (pb.mu_neg - pb.mu_pos), abs=1e-12)


def test_auc_objective_examples():
    ds = synthetic_binary_dataset(60, 5, seed=1)
    pb = AucProblem(ds, M=1.0, B=1.0)
    p = pb.p
    X = ds.X.toarray()
    pos = ds.labels == 1
    v0 = np.zeros(pb.primal_dim)
    assert auc_primal_objective(pb, v0) == 0.0
    # zero features: (1-p) a^2 on positives and p b^2 on negatives
    zero = AucProblem(SparseDataset(sp.csr_matrix((60, 5)), ds.labels), M=1.0, B=1.0)
    v = np.r_[np.ones(5), 0.7, -0.4]
    assert zero.primal_objective(v) == pytest.approx(p * (1 - p) * 0.49 + (1 - p) * p * 0.16, rel=1e-12)
    rng = np.random.default_rng(1)
    v = rng.normal(size=pb.primal_dim)
    for al in rng.normal(size=20):
        assert pb.primal_objective(v) >= pb.saddle_value(v, al) - 1e-12
    # direct summation of F with the best response
    w, a, b = v[:-2], v[-2], v[-1]
    s = X @ w
    al = w @ (X[~pos].mean(0) - X[pos].mean(0))
    F = np.where(pos, (1 - p) * (s - a) ** 2 - 2 * (1 + al) * (1 - p) * s,
                 p * (s - b) ** 2 + 2 * (1 + al) * p * s) - p * (1 - p) * al**2
    assert pb.primal_objective(v) == pytest.approx(F.mean(), rel=1e-12)


def test_auc_degenerate():
    ds = SparseDataset(sp.csr_matrix(np.ones((3, 2))), np.array([1, 1, 1]))
    with pytest.raises(DegenerateProblemError):
        AucProblem(ds, M=1.0, B=1.0)
    with pytest.raises(DegenerateProblemError):
        auc_metric([1, 2], [1, 1])


def test_auc_metric_examples():
    assert auc_metric([0.9, 0.1], [1, -1]) == 1.0
    assert auc_metric([0.3] * 6, [1, -1, 1, -1, -1, 1]) == 0.5
    rng = np.random.default_rng(3)
    s = rng.normal(size=100)
    lab = np.where(rng.random(100) < 0.5, 1, -1)
    assert auc_metric(s, lab) == oracles.pairwise_auc(s, lab)


def test_synthetic_optimum():
    pb = make_synthetic(10, 5, seed=0)
    assert pb.primal_objective(pb.x_star) == pytest.approx(pb.optimal_value, abs=1e-10)
    x, val = oracles.descent_minimum(pb, np.zeros(5))
    assert abs(val - pb.optimal_value) <= 1e-12
    assert np.linalg.norm(x - pb.x_star) < 1e-6
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.normal(scale=3, size=5)
        gap = pb.primal_objective(x) - pb.optimal_value
        assert gap >= 0.5 * pb.mu_p * np.sum((x - pb.x_star) ** 2) - 1e-12
    assert pb.constants.G <= 10 and pb.constants.L == 1.0 and pb.constants.v == 1.0


def test_synthetic_best_response_grid():
    pb = make_synthetic(3, 2, lambda_d=0.5, seed=4)
    x = np.array([0.3, -0.8])
    y = pb.best_response(x)
    l = pb.A_matrix @ x
    ours = float(y @ l) - 0.25 * float(((y - 1 / 3) ** 2).sum())
    g = np.arange(0, 1 + 1e-9, 1e-4)
    best = -np.inf
    for y1 in g:
        y2 = g[g <= 1 - y1 + 1e-12]
        y3 = np.maximum(1 - y1 - y2, 0)
        val = y1 * l[0] + y2 * l[1] + y3 * l[2] - 0.25 * ((y1 - 1 / 3) ** 2 + (y2 - 1 / 3) ** 2 + (y3 - 1 / 3) ** 2)
        best = max(best, val.max())
    assert ours >= best - 1e-12 and ours - best <= 1e-6


def test_synthetic_unbiased_and_contracts():
    pb = make_synthetic(7, 3, seed=2)
    rng = np.random.default_rng(0)
    x = rng.normal(size=3)
    y = project_simplex(rng.normal(size=7))
    gx = sum(pb.stoch_grad(x, y, i)[0] for i in range(7)) / 7
    gy = sum(pb.stoch_grad(x, y, i)[1] for i in range(7)) / 7
    fx, fy = pb.full_grad(x, y)
    assert np.allclose(gx, fx, atol=1e-12) and np.allclose(gy, fy, atol=1e-12)
    with pytest.raises(ContractViolation):
        make_synthetic(3, 3, op_norm=11)
