"""Euclidean projections onto the feasible sets used by the solvers.

The numeric work lives in small ``numba`` kernels so the compiled solver
loops can call the very same code as the public Python wrappers below.
Wrappers validate arguments; kernels assume valid input.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ContractViolation, NumericalFailure

# Set codes shared with the compiled solver loop.
WHOLE_SPACE = 0
L2_BALL = 1
L1_BALL = 2
SIMPLEX = 3
INTERVAL = 4

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_ROUNDS = 1000


@njit(cache=True)
def _simplex(v):
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = 0.0
    tau = 0.0
    for k in range(n):
        css += u[k]
        t = (css - 1.0) / (k + 1)
        if u[k] - t > 0.0:
            tau = t
    out = np.empty(n)
    for j in range(n):
        r = v[j] - tau
        # r == 0 maps to +0.0, never -0.0
        out[j] = r if r > 0.0 else 0.0
    return out


@njit(cache=True)
def _l2_ball(v, center, radius):
    d = v - center
    nrm = np.sqrt(np.dot(d, d))
    if nrm <= radius:
        return v.copy()
    return center + (radius / nrm) * d


@njit(cache=True)
def _l1_ball(v, radius):
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    w = radius * _simplex(a / radius)
    return np.sign(v) * w


@njit(cache=True)
def _clip(v, lo, hi):
    out = np.empty(v.shape[0])
    for j in range(v.shape[0]):
        out[j] = min(max(v[j], lo), hi)
    return out


@njit(cache=True)
def _project_set(kind, center, radius, lo, hi, v):
    if kind == WHOLE_SPACE:
        return v.copy()
    if kind == L2_BALL:
        return _l2_ball(v, center, radius)
    if kind == L1_BALL:
        return _l1_ball(v, radius)
    if kind == SIMPLEX:
        return _simplex(v)
    return _clip(v, lo, hi)


@njit(cache=True)
def _dykstra(kind, center, radius, lo, hi, bc, br, v, tol, max_rounds):
    # Alternates ball then set, so the returned point lies exactly in the set.
    x = v.copy()
    p = np.zeros_like(v)
    q = np.zeros_like(v)
    diff = np.inf
    for _ in range(max_rounds):
        y = _l2_ball(x + p, bc, br)
        p = x + p - y
        xn = _project_set(kind, center, radius, lo, hi, y + q)
        q = y + q - xn
        d = xn - x
        diff = np.sqrt(np.dot(d, d))
        x = xn
        if diff <= tol:
            return x, 0, diff
    return x, 1, diff


@njit(cache=True)
def _project_in_ball(dom, bc, br, v):
    """Project ``v`` onto ``dom`` intersected with the ball B(bc, br).

    ``br = inf`` means no ball. Returns ``(point, status, residual)``;
    status 1 flags a failed projection (empty intersection).
    """
    kind, center, radius, lo, hi = dom
    if not br < np.inf:
        return _project_set(kind, center, radius, lo, hi, v), 0, 0.0
    if kind == WHOLE_SPACE:
        return _l2_ball(v, bc, br), 0, 0.0
    if v.shape[0] == 1 and (kind == INTERVAL or kind == L2_BALL or kind == L1_BALL):
        # one-dimensional sets are intervals; their intersection is exact
        if kind == INTERVAL:
            a, b = lo, hi
        elif kind == L2_BALL:
            a, b = center[0] - radius, center[0] + radius
        else:
            a, b = -radius, radius
        return _clip(v, max(a, bc[0] - br), min(b, bc[0] + br)), 0, 0.0
    p = _project_set(kind, center, radius, lo, hi, v)
    d = p - bc
    if np.sqrt(np.dot(d, d)) <= br:
        return p, 0, 0.0
    # P_K(v) is outside the ball, so the ball constraint is active at the answer
    return _project_on_sphere(kind, center, radius, lo, hi, bc, br, v)


@njit(cache=True)
def _project_on_sphere(kind, center, radius, lo, hi, bc, br, v):
    # With the ball active the projection is P_K((v + lam*bc) / (1 + lam)) for
    # the lam >= 0 putting it on the sphere; the distance to bc falls with lam.
    lam_lo = 0.0
    lam_hi = 1.0
    while True:
        x = _project_set(kind, center, radius, lo, hi, (v + lam_hi * bc) / (1.0 + lam_hi))
        d = x - bc
        if np.sqrt(np.dot(d, d)) <= br:
            break
        lam_lo = lam_hi
        lam_hi *= 2.0
        if lam_hi > 1e300:
            return x, 1, np.sqrt(np.dot(d, d)) - br
    best = x
    for _ in range(400):
        if lam_hi - lam_lo <= 1e-15 * lam_hi:
            break
        mid = 0.5 * (lam_lo + lam_hi)
        x = _project_set(kind, center, radius, lo, hi, (v + mid * bc) / (1.0 + mid))
        d = x - bc
        if np.sqrt(np.dot(d, d)) <= br:
            lam_hi = mid
            best = x
        else:
            lam_lo = mid
    return best, 0, 0.0


def _vec(point, name="point"):
    arr = np.asarray(point, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractViolation(f"{name} must be a 1-D vector, got shape {arr.shape}")
    return arr


def project_l2_ball(point, center, radius):
    point, center = _vec(point), _vec(center, "center")
    if point.shape != center.shape:
        raise ContractViolation(f"dimension mismatch: {point.shape} vs {center.shape}")
    if not radius > 0:
        raise ContractViolation(f"radius must be positive, got {radius}")
    return _l2_ball(point, center, float(radius))


def project_simplex(point):
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    point = _vec(point)
    if point.size == 0:
        raise ContractViolation("cannot project an empty vector onto the simplex")
    return _simplex(point)


def project_l1_ball(point, radius):
    point = _vec(point)
    if not radius > 0:
        raise ContractViolation(f"radius must be positive, got {radius}")
    return _l1_ball(point, float(radius))


def project_intersection(point, simplex_dim, center, radius, method="multiplier"):
    """Project onto the simplex intersected with the l2 ball B(center, radius).

    The default solves the problem exactly: when the simplex projection lies
    outside the ball the ball constraint is active, and the answer is
    P((v + lam * center) / (1 + lam)) for the lam >= 0 found by bisection.
    ``method="dykstra"`` runs Dykstra's alternating projections instead,
    stopping once successive iterates move by at most 1e-10 (at most 1000
    rounds); it can stall short of 1e-8 accuracy when the sphere meets the
    simplex at a shallow angle.

    Raises
    ------
    NumericalFailure
        If no feasible point is found or Dykstra runs out of rounds; the
        exception carries the residual.
    """
    point, center = _vec(point), _vec(center, "center")
    if point.shape != (simplex_dim,) or center.shape != (simplex_dim,):
        raise ContractViolation(
            f"expected vectors of length {simplex_dim}, got {point.shape} and {center.shape}"
        )
    if not radius > 0:
        raise ContractViolation(f"radius must be positive, got {radius}")
    if abs(center.sum() - 1.0) > 1e-9 or center.min() < -1e-12:
        raise ContractViolation("ball center must lie on the simplex")
    zeros = np.zeros(simplex_dim)
    if method == "dykstra":
        out, status, residual = _dykstra(
            SIMPLEX, zeros, np.inf, -np.inf, np.inf, center, float(radius), point,
            DYKSTRA_TOL, DYKSTRA_MAX_ROUNDS,
        )
        if status:
            raise NumericalFailure(f"Dykstra projection did not converge in {DYKSTRA_MAX_ROUNDS} rounds", residual)
        return out
    if method != "multiplier":
        raise ContractViolation(f"unknown method {method!r}")
    out, status, residual = _project_in_ball((SIMPLEX, zeros, np.inf, -np.inf, np.inf), center, float(radius), point)
    if status:
        raise NumericalFailure("no point of the simplex lies in the ball", residual)
    return out


def clamp_interval(point, lo, hi):
    if lo > hi:
        raise ContractViolation(f"empty interval [{lo}, {hi}]")
    return min(max(point, lo), hi)


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """A closed convex set with a Euclidean projection.

    Build instances through the classmethod constructors. ``simplex_ball``
    is the intersection of the simplex with an l2 ball.
    """

    kind: str
    dim: int
    radius: float = np.inf
    center: np.ndarray = field(default=None, repr=False)
    lo: float = -np.inf
    hi: float = np.inf

    _CODES = {
        "whole_space": WHOLE_SPACE,
        "l2_ball": L2_BALL,
        "l1_ball": L1_BALL,
        "simplex": SIMPLEX,
        "interval": INTERVAL,
    }

    @classmethod
    def whole_space(cls, dim):
        return cls("whole_space", int(dim))

    @classmethod
    def l2_ball(cls, center, radius):
        center = _vec(center, "center").copy()
        if not radius > 0:
            raise ContractViolation(f"radius must be positive, got {radius}")
        return cls("l2_ball", center.size, float(radius), center)

    @classmethod
    def l1_ball(cls, dim, radius):
        if not radius > 0:
            raise ContractViolation(f"radius must be positive, got {radius}")
        return cls("l1_ball", int(dim), float(radius))

    @classmethod
    def simplex(cls, n):
        if n < 1:
            raise ContractViolation("simplex dimension must be at least 1")
        return cls("simplex", int(n))

    @classmethod
    def interval(cls, lo, hi, dim=1):
        if lo > hi:
            raise ContractViolation(f"empty interval [{lo}, {hi}]")
        return cls("interval", int(dim), lo=float(lo), hi=float(hi))

    @classmethod
    def simplex_ball(cls, n, center, radius):
        center = _vec(center, "center").copy()
        if center.shape != (n,):
            raise ContractViolation(f"center must have length {n}")
        if not radius > 0:
            raise ContractViolation(f"radius must be positive, got {radius}")
        gap = np.linalg.norm(_simplex(center) - center)
        if gap > radius:
            raise ContractViolation("simplex and ball do not intersect")
        return cls("simplex_ball", int(n), float(radius), center)

    def kernel_spec(self):
        """Tuple consumed by the compiled projection kernels."""
        if self.kind == "simplex_ball":
            raise ContractViolation("simplex_ball has no single-set kernel code")
        center = self.center if self.center is not None else np.zeros(self.dim)
        return (self._CODES[self.kind], center, float(self.radius), self.lo, self.hi)

    def project(self, point):
        point = _vec(point)
        if point.shape != (self.dim,):
            raise ContractViolation(f"expected length {self.dim}, got {point.shape}")
        if self.kind == "simplex_ball":
            return project_intersection(point, self.dim, self.center, self.radius)
        return _project_set(*self.kernel_spec(), point)

    def project_with_ball(self, point, center, radius):
        """Project onto this set intersected with B(center, radius)."""
        point = _vec(point)
        out, status, residual = _project_in_ball(
            self.kernel_spec(), _vec(center, "center"), float(radius), point
        )
        if status:
            raise NumericalFailure("set and ball do not intersect", residual)
        return out

    def contains(self, point, tol=1e-10):
        point = _vec(point)
        if point.shape != (self.dim,) or not np.all(np.isfinite(point)):
            return False
        if self.kind == "whole_space":
            return True
        if self.kind == "l2_ball":
            return np.linalg.norm(point - self.center) <= self.radius + tol
        if self.kind == "l1_ball":
            return np.abs(point).sum() <= self.radius + tol
        if self.kind == "interval":
            return bool(np.all(point >= self.lo - tol) and np.all(point <= self.hi + tol))
        on_simplex = point.min() >= -tol and abs(point.sum() - 1.0) <= tol
        if self.kind == "simplex":
            return bool(on_simplex)
        return bool(on_simplex and np.linalg.norm(point - self.center) <= self.radius + tol)
