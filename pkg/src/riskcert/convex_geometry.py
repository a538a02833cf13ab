"""Convex compact sets exposed through support, linear-maximization and
projection oracles.

Points of vector sets are 1-D arrays, points of matrix sets are square
symmetric 2-D arrays, and points of a :class:`Product` are tuples of the
factors' points. All sets are immutable after construction.
"""

import math

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, DimensionError, DomainError
from .linalg import as_sym, eigh, project_psd, require_pd, sym

__all__ = [
    "ConvexSet",
    "Box",
    "EuclideanBall",
    "Ellipsoid",
    "SphericalLayer",
    "Simplex",
    "MatrixSimplex",
    "PSDMatrixSimplex",
    "SpectahedronSlice",
    "Singleton",
    "Product",
    "AffinePreimage",
    "project_simplex",
    "dykstra",
]


def project_simplex(p, total=1.0):
    """Euclidean projection onto {x >= 0, sum(x) = total} by sort-and-threshold."""
    p = np.asarray(p, dtype=float)
    flat = p.ravel()
    u = np.sort(flat, kind="stable")[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, flat.size + 1)
    k = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[k] / (k + 1.0)
    return np.maximum(flat - tau, 0.0).reshape(p.shape)


def dykstra(point, projections, tol=1e-10, max_iter=10000):
    """Dykstra's alternating projections onto the intersection of convex sets.

    Stops when two successive sweeps differ by less than ``tol`` in the
    Frobenius norm; raises :class:`ConvergenceError` otherwise.
    """
    x = np.array(point, dtype=float)
    incs = [np.zeros_like(x) for _ in projections]
    change = math.inf
    for _ in range(max_iter):
        x_prev = x
        for i, proj in enumerate(projections):
            y = proj(x + incs[i])
            incs[i] = x + incs[i] - y
            x = y
        change = float(np.linalg.norm(x - x_prev))
        if change < tol:
            return x
    raise ConvergenceError("Dykstra projection did not converge", gap=change)


class ConvexSet:
    """Base class. Subclasses set ``shape`` and implement the oracles."""

    shape = ()
    #: whether ``linear_oracle`` returns an exact extreme-point maximizer
    exact_lmo = True

    @property
    def ambient_dim(self):
        return int(np.prod(self.shape))

    def _check(self, p, name="point"):
        p = np.asarray(p, dtype=float)
        if p.shape != self.shape:
            raise DimensionError(f"{name} has shape {p.shape}, set expects {self.shape}")
        if not np.all(np.isfinite(p)):
            raise DomainError(f"{name} must be finite")
        return p

    def support(self, c):
        """Return ``(max_{x in set} <c, x>, argmax)``."""
        x = self.linear_oracle(c)
        return float(np.vdot(self._check(c, "direction"), x)), x

    def linear_oracle(self, c):
        raise NotImplementedError

    def project(self, p):
        raise NotImplementedError

    def contains(self, p, tol=1e-9):
        p = self._check(p)
        return float(np.linalg.norm(self.project(p) - p)) <= tol * max(1.0, float(np.linalg.norm(p)))

    def sample_boundary(self, rng):
        """A support point in a random direction (used to probe worst cases)."""
        return self.linear_oracle(rng.standard_normal(self.shape))


class Box(ConvexSet):
    def __init__(self, lower, upper):
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        lo, hi = np.broadcast_arrays(lo, hi)
        if lo.ndim != 1:
            raise DimensionError("Box bounds must be vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("Box bounds must be finite")
        if np.any(lo > hi):
            raise DomainError("Box lower bound exceeds upper bound")
        self.lower = lo.copy()
        self.upper = hi.copy()
        self.shape = lo.shape

    def linear_oracle(self, c):
        c = self._check(c, "direction")
        return np.where(c > 0, self.upper, self.lower)

    def support(self, c):
        c = self._check(c, "direction")
        x = np.where(c > 0, self.upper, self.lower)
        return float(c @ x), x

    def project(self, p):
        return np.clip(self._check(p), self.lower, self.upper)

    def contains(self, p, tol=1e-9):
        p = self._check(p)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))


class EuclideanBall(ConvexSet):
    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float)).copy()
        if radius < 0:
            raise DomainError("radius must be nonnegative")
        self.radius = float(radius)
        self.shape = self.center.shape

    def linear_oracle(self, c):
        c = self._check(c, "direction")
        n = np.linalg.norm(c)
        if n == 0.0:
            return self.center.copy()
        return self.center + self.radius * c / n

    def project(self, p):
        p = self._check(p)
        d = p - self.center
        n = np.linalg.norm(d)
        if n <= self.radius:
            return p.copy()
        return self.center + d * (self.radius / n)


class SphericalLayer(EuclideanBall):
    """The layer {r <= ||u|| <= R}.

    The layer is not convex; the oracles describe its convex hull, the ball
    of radius R, whose support function coincides with the layer's. The
    inner radius is kept for signal probing.
    """

    def __init__(self, dim, r, R):
        if not 0 <= r <= R:
            raise DomainError("need 0 <= r <= R")
        super().__init__(np.zeros(int(dim)), R)
        self.r = float(r)
        self.R = float(R)


class Ellipsoid(ConvexSet):
    """{x : ||S (x - center)||_2 <= 1} with S square and invertible."""

    def __init__(self, S, center=None):
        S = np.asarray(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise DimensionError("Ellipsoid shape matrix must be square")
        self.S = S.copy()
        n = S.shape[0]
        self.center = np.zeros(n) if center is None else np.asarray(center, dtype=float).copy()
        self.shape = (n,)
        self._Sinv = np.linalg.inv(S)
        self._gram_w, self._gram_v = eigh(S.T @ S)
        if self._gram_w[0] <= 0:
            raise DomainError("Ellipsoid shape matrix is singular")

    def linear_oracle(self, c):
        c = self._check(c, "direction")
        y = self._Sinv.T @ c
        n = np.linalg.norm(y)
        if n == 0.0:
            return self.center.copy()
        return self.center + self._Sinv @ (y / n)

    def project(self, p):
        p = self._check(p)
        q = p - self.center
        if np.linalg.norm(self.S @ q) <= 1.0:
            return p.copy()
        w, v = self._gram_w, self._gram_v
        qt = v.T @ q

        def excess(mu):
            return float(np.sum(w * qt**2 / (1.0 + mu * w) ** 2)) - 1.0

        hi = 1.0
        while excess(hi) > 0:
            hi *= 2.0
        mu = brentq(excess, 0.0, hi, xtol=1e-15, rtol=1e-15)
        return self.center + v @ (qt / (1.0 + mu * w))

    def contains(self, p, tol=1e-9):
        p = self._check(p)
        return float(np.linalg.norm(self.S @ (p - self.center))) <= 1.0 + tol


class Simplex(ConvexSet):
    """The probability simplex in R^dim."""

    def __init__(self, dim):
        self.shape = (int(dim),)

    def linear_oracle(self, c):
        c = self._check(c, "direction")
        x = np.zeros(self.shape)
        x[int(np.argmax(c))] = 1.0
        return x

    def project(self, p):
        return project_simplex(self._check(p))

    def contains(self, p, tol=1e-9):
        p = self._check(p)
        return bool(np.all(p >= -tol) and abs(p.sum() - 1.0) <= tol)


def _matrix_simplex_vertex(d, i, j):
    x = np.zeros((d, d))
    if i == j:
        x[i, i] = 1.0
    else:
        x[i, j] = x[j, i] = 0.5
    return x


class MatrixSimplex(ConvexSet):
    """Symmetric d x d matrices with nonnegative entries summing to one.

    Extreme points are e_i e_i^T and (e_i e_j^T + e_j e_i^T) / 2.
    """

    def __init__(self, d):
        self.d = int(d)
        self.shape = (self.d, self.d)

    def linear_oracle(self, c):
        c = sym(self._check(c, "direction"))
        iu = np.triu_indices(self.d)
        k = int(np.argmax(c[iu]))
        return _matrix_simplex_vertex(self.d, int(iu[0][k]), int(iu[1][k]))

    def project(self, p):
        # the projection of a symmetric point onto the full d^2 simplex is symmetric
        return sym(project_simplex(sym(self._check(p))))

    def contains(self, p, tol=1e-9):
        p = self._check(p)
        return bool(np.allclose(p, p.T, atol=tol) and np.all(p >= -tol) and abs(p.sum() - 1.0) <= tol)


class PSDMatrixSimplex(MatrixSimplex):
    """MatrixSimplex intersected with the PSD cone.

    No exact linear oracle is available; the linear oracle of the enclosing
    MatrixSimplex gives valid (loose) upper bounds. Projection is Dykstra.
    """

    exact_lmo = False

    def outer(self):
        return MatrixSimplex(self.d)

    def linear_oracle(self, c):
        raise NotImplementedError("no exact linear oracle for PSD-cut matrix simplex")

    def support(self, c):
        raise NotImplementedError("no exact support function for PSD-cut matrix simplex")

    def project(self, p):
        p = sym(self._check(p))
        return sym(dykstra(p, [lambda z: sym(project_simplex(sym(z))), project_psd]))

    def contains(self, p, tol=1e-9):
        if not super().contains(p, tol):
            return False
        return bool(np.linalg.eigvalsh(sym(p))[0] >= -tol)


class SpectahedronSlice(ConvexSet):
    """{Z in S^n : Z >= 0, Z[n-1, n-1] = 1, lo <= <W, Z> <= hi}.

    The leading (n-1) x (n-1) block of W must be positive definite and
    ``hi`` finite, which makes the set compact.

    The support function is evaluated through its one-dimensional Lagrange
    dual: for a multiplier ``lam`` of the trace constraint the best corner
    multiplier follows from a Schur complement, and the dual value at any
    admissible ``lam`` is an upper bound on the support value. A rank-one
    (rank-two in the degenerate case) primal maximizer is recovered from the
    optimal multiplier.
    """

    exact_lmo = True

    def __init__(self, n, W=None, lo=-math.inf, hi=None):
        self.n = int(n)
        if self.n < 1:
            raise DomainError("n must be positive")
        self.shape = (self.n, self.n)
        k = self.n - 1
        if W is None:
            W = np.eye(self.n)
        W = as_sym(W, self.n, "W")
        if hi is None or not math.isfinite(hi):
            raise DomainError("SpectahedronSlice needs a finite upper trace bound")
        if lo > hi:
            raise DomainError("empty SpectahedronSlice: lo > hi")
        self.W = W
        self.lo = float(lo)
        self.hi = float(hi)
        if k > 0:
            L = require_pd(W[:k, :k], "leading block of W")
            self._Linv = np.linalg.inv(L)
            self._a_base = self._Linv @ W[:k, k]
            tmin = W[k, k] - float(self._a_base @ self._a_base)
        else:
            tmin = W[0, 0]
        if self.hi < tmin - 1e-12:
            raise DomainError("empty SpectahedronSlice: hi below the attainable minimum")

    # dual machinery -----------------------------------------------------
    def _support_parts(self, C):
        n, k = self.n, self.n - 1
        W = self.W
        C = sym(C)
        if k == 0:
            v = float(C[0, 0])
            return v, v, np.ones((1, 1))
        Linv = self._Linv
        lam_eig, U = eigh(Linv @ C[:k, :k] @ Linv.T)
        a = U.T @ self._a_base
        b = U.T @ (Linv @ C[:k, k])
        w0, c0 = W[k, k], C[k, k]
        lo, hi = self.lo, self.hi
        lam_top = float(lam_eig[-1])
        scale = max(1.0, float(np.max(np.abs(lam_eig))), float(np.max(np.abs(b), initial=0.0)))
        tiny = 1e-12 * scale

        def r_of(lam):
            den = lam - lam_eig
            num = lam * a - b
            safe = den > 0.0
            return np.where(safe, num / np.where(safe, den, 1.0), 0.0), num

        def trace_of(lam):
            r, _ = r_of(lam)
            return float(r @ r - 2.0 * (a @ r) + w0)

        def dual(lam):
            r, num = r_of(lam)
            cost = lam * hi if lam >= 0 else lam * lo
            return cost - (lam * w0 - c0) + float(num @ r)

        def root(slope, left, right=None):
            # zero of slope - T(lam) on (left, right); T is decreasing
            if slope - trace_of(left) >= 0:
                return left
            if right is None:
                right = max(2.0 * abs(left), 1.0) + left
                while slope - trace_of(right) < 0:
                    right = 2.0 * right + 1.0
            return brentq(lambda t: slope - trace_of(t), left, right, xtol=1e-15 * scale, rtol=1e-15, maxiter=500)

        if lam_top < 0.0:
            t0 = trace_of(0.0)
            if t0 > hi:
                lam_star = root(hi, 0.0)
            elif t0 >= lo:
                lam_star = 0.0
            else:
                lam_star = root(lo, lam_top + tiny, 0.0)
        else:
            lam_star = root(hi, lam_top + tiny)
        if lam_star <= lam_top + tiny:
            lam_star = lam_top
        upper = dual(lam_star)
        r, _ = r_of(lam_star)
        u = -(Linv.T @ (U @ r))
        Z = np.zeros((n, n))
        Z[:k, :k] = np.outer(u, u)
        Z[:k, k] = u
        Z[k, :k] = u
        Z[k, k] = 1.0
        t = float(np.vdot(W, Z))
        if lam_star == lam_top and lam_star != 0.0:
            # degenerate case: fill the active trace constraint along the top eigenvector
            target = hi if lam_star > 0 else lo
            if target > t:
                v = Linv.T @ U[:, -1]
                Z[:k, :k] += (target - t) * np.outer(v, v)
                t = target
        if t > hi:
            Z = self._shrink_to_bound(Z)
        lower = float(np.vdot(C, Z))
        return lower, max(upper, lower), sym(Z)

    def _shrink_to_bound(self, Z):
        k = self.n - 1
        u = Z[:k, k]
        u0 = -(self._Linv.T @ self._a_base)

        def tr(s):
            w = u0 + s * (u - u0)
            zz = np.zeros_like(Z)
            zz[:k, :k] = np.outer(w, w)
            zz[:k, k] = w
            zz[k, :k] = w
            zz[k, k] = 1.0
            return zz

        s = brentq(lambda s: float(np.vdot(self.W, tr(s))) - self.hi, 0.0, 1.0)
        return tr(s)

    def support_bounds(self, c):
        """Return ``(lower, upper, Z)``: a feasible Z attaining ``lower`` and a
        dual-certified ``upper`` bound on the support value."""
        return self._support_parts(self._check(c, "direction"))

    def support(self, c):
        lower, upper, Z = self.support_bounds(c)
        return upper, Z

    def linear_oracle(self, c):
        return self.support_bounds(c)[2]

    def project(self, p, tol=1e-10, max_iter=10000):
        p = sym(self._check(p))
        n = self.n
        W = self.W
        wn2 = float(np.vdot(W, W))

        def corner(z):
            z = z.copy()
            z[n - 1, n - 1] = 1.0
            return z

        def slab(z):
            t = float(np.vdot(W, z))
            if t > self.hi:
                return z - (t - self.hi) / wn2 * W
            if t < self.lo:
                return z + (self.lo - t) / wn2 * W
            return z

        return sym(dykstra(p, [project_psd, corner, slab], tol=tol, max_iter=max_iter))

    def contains(self, p, tol=1e-9):
        p = self._check(p)
        if not np.allclose(p, p.T, atol=tol) or abs(p[-1, -1] - 1.0) > tol:
            return False
        t = float(np.vdot(self.W, p))
        if t > self.hi + tol or t < self.lo - tol:
            return False
        return bool(np.linalg.eigvalsh(sym(p))[0] >= -tol)


class Singleton(ConvexSet):
    def __init__(self, point):
        self.point = np.array(point, dtype=float)
        self.shape = self.point.shape

    def linear_oracle(self, c):
        self._check(c, "direction")
        return self.point.copy()

    def project(self, p):
        self._check(p)
        return self.point.copy()


class Product(ConvexSet):
    """Cartesian product; points are tuples of factor points."""

    def __init__(self, *factors):
        if not factors:
            raise DomainError("Product needs at least one factor")
        self.factors = tuple(factors)
        self.shape = tuple(f.shape for f in factors)
        self.exact_lmo = all(f.exact_lmo for f in factors)

    @property
    def ambient_dim(self):
        return int(sum(f.ambient_dim for f in self.factors))

    def _split(self, p, name="point"):
        if len(p) != len(self.factors):
            raise DimensionError(f"{name} must have {len(self.factors)} components")
        return [np.asarray(q, dtype=float) for q in p]

    def support(self, c):
        parts = [f.support(ci) for f, ci in zip(self.factors, self._split(c, "direction"))]
        return float(sum(v for v, _ in parts)), tuple(x for _, x in parts)

    def linear_oracle(self, c):
        return self.support(c)[1]

    def project(self, p):
        return tuple(f.project(pi) for f, pi in zip(self.factors, self._split(p)))

    def contains(self, p, tol=1e-9):
        return all(f.contains(pi, tol) for f, pi in zip(self.factors, self._split(p)))

    def sample_boundary(self, rng):
        return tuple(f.sample_boundary(rng) for f in self.factors)


class AffinePreimage(ConvexSet):
    """{x : B x + b in base} for square invertible B."""

    def __init__(self, base, B, b=None):
        B = np.asarray(B, dtype=float)
        if B.ndim != 2 or B.shape[0] != B.shape[1] or base.shape != (B.shape[0],):
            raise DimensionError("AffinePreimage needs a square B matching the base set")
        self.base = base
        self.B = B.copy()
        self.b = np.zeros(B.shape[0]) if b is None else np.asarray(b, dtype=float).copy()
        self.shape = (B.shape[1],)
        self._Binv = np.linalg.inv(B)
        self.exact_lmo = base.exact_lmo

    def support(self, c):
        c = self._check(c, "direction")
        val, y = self.base.support(self._Binv.T @ c)
        x = self._Binv @ (y - self.b)
        return float(val - c @ (self._Binv @ self.b)), x

    def linear_oracle(self, c):
        return self.support(c)[1]

    def project(self, p, tol=1e-12, max_iter=10000):
        # minimize 0.5 ||Binv (y - b) - p||^2 over y in base (FISTA)
        p = self._check(p)
        Bi = self._Binv
        step = 1.0 / np.linalg.norm(Bi, 2) ** 2
        y = self.base.project(self.B @ p + self.b)
        z, t = y.copy(), 1.0
        for _ in range(max_iter):
            grad = Bi.T @ (Bi @ (z - self.b) - p)
            y_new = self.base.project(z - step * grad)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            z = y_new + (t - 1.0) / t_new * (y_new - y)
            if np.linalg.norm(y_new - y) < tol:
                y = y_new
                break
            y, t = y_new, t_new
        return Bi @ (y - self.b)

    def contains(self, p, tol=1e-9):
        p = self._check(p)
        return self.base.contains(self.B @ p + self.b, tol)
