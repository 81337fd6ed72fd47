"""Concrete saddle problems: robust hinge-loss DRO, AUC maximization and a
synthetic strongly convex-concave test instance with a known optimum.
"""

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.stats import rankdata

from .core import ProblemConstants, SaddleProblem, estimate_constants
from .errors import ContractViolation, DegenerateProblemError
from .geometry import FeasibleSet, _simplex


def _spectral_norm(X):
    if sp.issparse(X):
        if X.shape[0] * X.shape[1] <= 4_000_000:
            X = X.toarray()
        else:
            from scipy.sparse.linalg import svds

            return float(svds(X, k=1, return_singular_vectors=False)[0])
    return float(np.linalg.norm(X, 2)) if X.size else 0.0


def _check_index(i, n):
    if not 0 <= i < n:
        raise ContractViolation(f"sample index {i} outside [0, {n})")


# --------------------------------------------------------------------- DRO


@njit(cache=True)
def _dro_grad(data, x, y, i):
    indptr, indices, vals, labels, lam1, lam2, l1_reg = data
    n = labels.shape[0]
    s = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        s += vals[p] * x[indices[p]]
    hinge = 1.0 - labels[i] * s
    loss = hinge if hinge > 0.0 else 0.0
    if l1_reg:
        gx = lam2 * np.sign(x)
    else:
        gx = lam2 * x
    if hinge > 0.0:
        coef = -n * y[i] * labels[i]
        for p in range(indptr[i], indptr[i + 1]):
            gx[indices[p]] += coef * vals[p]
    gy = -lam1 * n * (n * y - 1.0)
    gy[i] += n * loss
    return gx, gy


class DroProblem(SaddleProblem):
    """Distributionally robust hinge-loss classification.

    f(x, y) = sum_i y_i l_i(x) - (lambda1/2) ||n y - 1||^2 + g(x) with y on
    the simplex, l_i(x) = max(0, 1 - b_i a_i^T x) and g either
    (lambda2/2)||x||^2 or lambda2 ||x||_1. Both weights default to 1/n.
    """

    def __init__(
        self,
        dataset,
        lambda1=None,
        lambda2=None,
        regularizer="l2_squared",
        primal_domain=None,
        M=None,
        B=None,
        probe_radius=1.0,
    ):
        if regularizer not in ("l2_squared", "l1"):
            raise ContractViolation(f"unknown regularizer {regularizer!r}")
        self.dataset = dataset
        n, d = dataset.n, dataset.d
        self.n_samples = self.dual_dim = n
        self.primal_dim = d
        self.lambda1 = 1.0 / n if lambda1 is None else float(lambda1)
        self.lambda2 = 1.0 / n if lambda2 is None else float(lambda2)
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ContractViolation("lambda1 and lambda2 must be positive")
        self.regularizer = regularizer
        self.primal_domain = primal_domain or FeasibleSet.whole_space(d)
        self.dual_domain = FeasibleSet.simplex(n)
        self._b = dataset.labels.astype(np.float64)
        X = dataset.X
        self.kernel = (
            _dro_grad,
            (X.indptr.astype(np.int64), X.indices.astype(np.int64), X.data,
             self._b, self.lambda1, self.lambda2, regularizer == "l1"),
        )
        if M is None or B is None:
            M_est, B_est = estimate_constants(self, radius=probe_radius)
            M = M_est if M is None else M
            B = B_est if B is None else B
        # phi* = (lambda1/2)||n y - 1||^2 is (lambda1 n^2)-strongly convex
        self.constants = ProblemConstants(
            M=M,
            B=B,
            L=1.0 / (self.lambda1 * n * n),
            v=1.0,
            G=max(_spectral_norm(X), np.finfo(float).tiny),
            mu=self.lambda2 if regularizer == "l2_squared" else None,
            theta=0.5,
        )

    def losses(self, x):
        return np.maximum(0.0, 1.0 - self._b * (self.dataset.X @ x))

    def _reg(self, x):
        if self.regularizer == "l1":
            return self.lambda2 * np.abs(x).sum()
        return 0.5 * self.lambda2 * float(x @ x)

    def _reg_grad(self, x):
        if self.regularizer == "l1":
            return self.lambda2 * np.sign(x)
        return self.lambda2 * x

    def _divergence(self, y):
        r = self.n_samples * y - 1.0
        return 0.5 * self.lambda1 * float(r @ r)

    def stoch_grad(self, x, y, i):
        _check_index(i, self.n_samples)
        grad_fn, data = self.kernel
        return grad_fn(data, np.asarray(x, float), np.asarray(y, float), i)

    def full_grad(self, x, y):
        margins = 1.0 - self._b * (self.dataset.X @ x)
        active = (margins > 0).astype(np.float64)
        gx = -(self.dataset.X.T @ (y * self._b * active)) + self._reg_grad(x)
        n = self.n_samples
        gy = np.maximum(margins, 0.0) - self.lambda1 * n * (n * y - 1.0)
        return gx, gy

    def saddle_value(self, x, y):
        return float(y @ self.losses(x)) - self._divergence(y) + self._reg(x)

    def best_response(self, x):
        n = self.n_samples
        return _simplex(1.0 / n + self.losses(x) / (self.lambda1 * n * n))

    def primal_objective(self, x):
        return self.saddle_value(x, self.best_response(x))

    def lower_bound(self):
        return 0.0


def dro_loss_vector(problem, x):
    return problem.losses(np.asarray(x, float))


def dro_best_response(problem, x):
    return problem.best_response(np.asarray(x, float))


def dro_stoch_grad(problem, x, y, i):
    return problem.stoch_grad(x, y, i)


def dro_primal_objective(problem, x):
    return problem.primal_objective(np.asarray(x, float))


# --------------------------------------------------------------------- AUC


@njit(cache=True)
def _auc_grad(data, v, alpha, i):
    indptr, indices, vals, labels, p, lam = data
    d = v.shape[0] - 2
    a = v[d]
    b = v[d + 1]
    al = alpha[0]
    s = 0.0
    for k in range(indptr[i], indptr[i + 1]):
        s += vals[k] * v[indices[k]]
    g = np.zeros(d + 2)
    for j in range(d):
        g[j] = lam * v[j]
    if labels[i] > 0:
        coef = 2.0 * (1.0 - p) * (s - a) - 2.0 * (1.0 + al) * (1.0 - p)
        g[d] = -2.0 * (1.0 - p) * (s - a)
        galpha = -2.0 * p * (1.0 - p) * al - 2.0 * (1.0 - p) * s
    else:
        coef = 2.0 * p * (s - b) + 2.0 * (1.0 + al) * p
        g[d + 1] = -2.0 * p * (s - b)
        galpha = -2.0 * p * (1.0 - p) * al + 2.0 * p * s
    for k in range(indptr[i], indptr[i + 1]):
        g[indices[k]] += coef * vals[k]
    ga = np.empty(1)
    ga[0] = galpha
    return g, ga


class AucProblem(SaddleProblem):
    """Square-loss AUC maximization as a saddle problem over v = [w, a, b]
    and a scalar dual alpha.

    The primal variable is confined to an l2 or l1 ball of ``radius``;
    alpha is unconstrained. ``lambda_reg`` adds (lambda_reg/2)||w||^2.
    ``eval_dataset`` (default: the training data) feeds :meth:`metric`.
    """

    def __init__(
        self,
        dataset,
        radius=10.0,
        ball="l2",
        lambda_reg=0.0,
        eval_dataset=None,
        M=None,
        B=None,
        probe_radius=1.0,
    ):
        p = dataset.pos_fraction
        if not 0.0 < p < 1.0:
            raise DegenerateProblemError("AUC needs both positive and negative examples")
        if ball not in ("l2", "l1"):
            raise ContractViolation(f"unknown ball {ball!r}")
        if lambda_reg < 0:
            raise ContractViolation("lambda_reg must be nonnegative")
        d = dataset.d
        self.dataset = dataset
        self.eval_dataset = dataset if eval_dataset is None else eval_dataset
        if self.eval_dataset.d != d:
            raise ContractViolation("evaluation data must share the feature dimension")
        self.n_samples = dataset.n
        self.primal_dim = d + 2
        self.dual_dim = 1
        self.p = p
        self.lambda_reg = float(lambda_reg)
        self.mu_pos = dataset.mu_pos
        self.mu_neg = dataset.mu_neg
        self._mean_gap = self.mu_neg - self.mu_pos
        self.radius = float(radius)
        self.ball = ball
        if ball == "l2":
            self.primal_domain = FeasibleSet.l2_ball(np.zeros(d + 2), radius)
        else:
            self.primal_domain = FeasibleSet.l1_ball(d + 2, radius)
        self.dual_domain = FeasibleSet.whole_space(1)
        X = dataset.X
        self.kernel = (
            _auc_grad,
            (X.indptr.astype(np.int64), X.indices.astype(np.int64), X.data,
             dataset.labels.astype(np.float64), p, self.lambda_reg),
        )
        if M is None or B is None:
            M_est, B_est = estimate_constants(self, radius=min(probe_radius, radius))
            M = M_est if M is None else M
            B = B_est if B is None else B
        # read as alpha * l(v) - phi*(alpha) with l(v) = 2p(1-p) w^T (mu_neg - mu_pos)
        # and phi*(alpha) = p(1-p) alpha^2, so L * G = ||mu_neg - mu_pos||
        q = 2.0 * p * (1.0 - p)
        self.constants = ProblemConstants(
            M=M,
            B=B,
            L=1.0 / q,
            v=1.0,
            G=max(q * float(np.linalg.norm(self._mean_gap)), np.finfo(float).tiny),
            theta=0.5,
        )

    def split(self, v):
        d = self.primal_dim - 2
        return v[:d], v[d], v[d + 1]

    def F_values(self, v, alpha):
        """Per-example values of F(w, a, b, alpha; (x_i, z_i))."""
        w, a, b = self.split(np.asarray(v, float))
        p = self.p
        s = self.dataset.X @ w
        pos = self.dataset.labels == 1
        return (
            (1 - p) * (s - a) ** 2 * pos
            + p * (s - b) ** 2 * ~pos
            - p * (1 - p) * alpha**2
            + 2 * (1 + alpha) * (p * s * ~pos - (1 - p) * s * pos)
        )

    def saddle_value(self, v, alpha):
        alpha = float(np.asarray(alpha).reshape(-1)[0])
        w = self.split(v)[0]
        return float(self.F_values(v, alpha).mean()) + 0.5 * self.lambda_reg * float(w @ w)

    def stoch_grad(self, v, alpha, i):
        _check_index(i, self.n_samples)
        grad_fn, data = self.kernel
        return grad_fn(data, np.asarray(v, float), np.asarray(alpha, float).reshape(1), i)

    def full_grad(self, v, alpha):
        v = np.asarray(v, float)
        al = float(np.asarray(alpha).reshape(-1)[0])
        w, a, b = self.split(v)
        p = self.p
        X = self.dataset.X
        pos = (self.dataset.labels == 1).astype(np.float64)
        neg = 1.0 - pos
        s = X @ w
        n = self.n_samples
        coef = (2 * (1 - p) * (s - a) - 2 * (1 + al) * (1 - p)) * pos + (
            2 * p * (s - b) + 2 * (1 + al) * p
        ) * neg
        gw = X.T @ coef / n + self.lambda_reg * w
        ga = -2 * (1 - p) * float(((s - a) * pos).mean())
        gb = -2 * p * float(((s - b) * neg).mean())
        galpha = -2 * p * (1 - p) * al + 2 * float((p * s * neg - (1 - p) * s * pos).mean())
        return np.concatenate([gw, [ga, gb]]), np.array([galpha])

    def best_response(self, v):
        w = self.split(np.asarray(v, float))[0]
        return np.array([float(w @ self._mean_gap)])

    def primal_objective(self, v):
        return self.saddle_value(v, self.best_response(v))

    def lower_bound(self):
        # squared terms are >= 0 and 2q t + q t^2 >= -q with q = p(1-p)
        return -self.p * (1.0 - self.p)

    def scores(self, v, dataset=None):
        ds = self.eval_dataset if dataset is None else dataset
        return ds.X @ self.split(np.asarray(v, float))[0]

    def metric(self, v):
        return auc_metric(self.scores(v), self.eval_dataset.labels)


def auc_stoch_grad(problem, v, alpha, i):
    return problem.stoch_grad(v, alpha, i)


def auc_best_response(problem, v):
    return problem.best_response(v)


def auc_primal_objective(problem, v):
    return problem.primal_objective(v)


def auc_metric(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly, ties counting 1/2.

    Computed from average ranks (Mann-Whitney U) in O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateProblemError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --------------------------------------------------------------- synthetic


@njit(cache=True)
def _synthetic_grad(data, x, y, i):
    A, anchor, mu, lam = data
    n = A.shape[0]
    ai = A[i]
    gx = n * y[i] * ai + mu * (x - anchor)
    gy = -lam * (y - 1.0 / n)
    gy[i] += n * np.dot(ai, x)
    return gx, gy


class SyntheticScProblem(SaddleProblem):
    """f(x, y) = y^T A x - (lambda_d/2)||y - 1/n||^2 + (mu_p/2)||x - anchor||^2
    over x in R^d and y on the simplex.

    The anchor is placed so that ``x_star`` minimizes P exactly, hence
    P* = P(x_star) is available in closed form.
    """

    def __init__(self, A, x_star, mu_p, lambda_d, M=None, B=None):
        A = np.ascontiguousarray(A, dtype=np.float64)
        x_star = np.asarray(x_star, dtype=np.float64)
        if not (mu_p > 0 and lambda_d > 0):
            raise ContractViolation("mu_p and lambda_d must be positive")
        n, d = A.shape
        self.A_matrix = A
        self.x_star = x_star
        self.mu_p = float(mu_p)
        self.lambda_d = float(lambda_d)
        self.n_samples = self.dual_dim = n
        self.primal_dim = d
        self.primal_domain = FeasibleSet.whole_space(d)
        self.dual_domain = FeasibleSet.simplex(n)
        y_star = self.best_response(x_star)
        self.anchor = x_star + A.T @ y_star / self.mu_p
        self.kernel = (_synthetic_grad, (A, self.anchor, self.mu_p, self.lambda_d))
        self.optimal_value = self.primal_objective(x_star)
        if M is None or B is None:
            radius = float(np.linalg.norm(x_star - self.initial_point())) + 1.0
            M_est, B_est = estimate_constants(self, radius=radius, warn=False)
            M = M_est if M is None else M
            B = B_est if B is None else B
        self.constants = ProblemConstants(
            M=M,
            B=B,
            L=1.0 / self.lambda_d,
            v=1.0,
            G=_spectral_norm(A),
            mu=self.mu_p,
            c=float(np.sqrt(2.0 / self.mu_p)),
            theta=0.5,
        )

    def stoch_grad(self, x, y, i):
        _check_index(i, self.n_samples)
        grad_fn, data = self.kernel
        return grad_fn(data, np.asarray(x, float), np.asarray(y, float), i)

    def full_grad(self, x, y):
        gx = self.A_matrix.T @ y + self.mu_p * (x - self.anchor)
        gy = self.A_matrix @ x - self.lambda_d * (y - 1.0 / self.n_samples)
        return gx, gy

    def saddle_value(self, x, y):
        r = y - 1.0 / self.n_samples
        dx = x - self.anchor
        return float(y @ (self.A_matrix @ x)) - 0.5 * self.lambda_d * float(r @ r) + 0.5 * self.mu_p * float(dx @ dx)

    def best_response(self, x):
        return _simplex(1.0 / self.n_samples + self.A_matrix @ np.asarray(x, float) / self.lambda_d)

    def primal_objective(self, x):
        return self.saddle_value(x, self.best_response(x))

    def primal_gradient(self, x):
        return self.A_matrix.T @ self.best_response(x) + self.mu_p * (x - self.anchor)


def make_synthetic(n, d, mu_p=1.0, lambda_d=1.0, seed=0, op_norm=1.0):
    """Random instance with Gaussian A rescaled to spectral norm ``op_norm`` (<= 10)."""
    if n < 1 or d < 1:
        raise ContractViolation("n and d must be positive")
    if not 0 < op_norm <= 10:
        raise ContractViolation("op_norm must lie in (0, 10]")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    A *= op_norm / np.linalg.norm(A, 2)
    x_star = rng.standard_normal(d)
    return SyntheticScProblem(A, x_star, mu_p, lambda_d)
