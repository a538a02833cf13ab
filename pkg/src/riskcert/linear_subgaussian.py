"""Linear functionals of signals observed through sub-Gaussian noise.

Observation ``omega = A x + a + xi`` with ``xi`` sub-Gaussian of covariance
proxy ``M(x) = M0 + sum_j x_j M_j`` (affine, PSD on X). The functional is
``G(x) = g^T x + c``.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import null_space, orth

from .affine_estimator import (
    AffineEstimate,
    EstimationProblem,
    SubGaussAffineMap,
)
from .convex_geometry import Box
from .errors import DomainError
from .lower_bounds import gauss_quantile
from .saddle_solver import SolverConfig, inner_max, outer_min
from .simple_families import SubGaussianFamily

__all__ = [
    "SubGaussLinearProblem",
    "psi_hat_closed",
    "psi_hat_box",
    "solve_box",
    "direct_product_opt",
    "consistency_check",
    "near_opt_factor",
    "gen_problem",
    "random_frame",
]


@dataclass(frozen=True)
class SubGaussLinearProblem:
    A: np.ndarray
    a: np.ndarray
    M0: np.ndarray
    Ms: np.ndarray
    g: np.ndarray
    c: float
    X: object
    epsilon: float
    K: int = 1

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def log_term(self):
        return math.log(2.0 / self.epsilon) / self.K

    def M(self, x):
        return self.M0 + np.tensordot(x, self.Ms, axes=1)

    def problem(self):
        """The generic :class:`EstimationProblem` view."""
        amap = SubGaussAffineMap(self.A, self.a, self.M0, self.Ms)
        return EstimationProblem(SubGaussianFamily(self.d), amap, self.g, self.c, self.X, self.epsilon, self.K)

    def envelope(self, x_top):
        """Same problem with the covariance frozen at M(x_top)."""
        return replace(self, M0=self.M(x_top), Ms=np.zeros_like(self.Ms))

    def quad_coeffs(self, f):
        return float(f @ self.M0 @ f), np.einsum("i,jik,k->j", f, self.Ms, f)


def psi_hat_closed(f, sign, prob, cfg=SolverConfig()):
    """max_x { sqrt(2 L f^T M(x) f) + sign (f^T (A x + a) - G(x)) } with the
    alpha-infimum done in closed form; the concave maximization over X goes
    through the generic inner solver and returns value + certified gap."""
    f = np.asarray(f, dtype=float)
    L = prob.log_term
    w0, w = prob.quad_coeffs(f)
    b = sign * (prob.A.T @ f - prob.g)
    b0 = sign * (prob.a @ f - prob.c)
    if not np.any(f):
        val, _ = prob.X.support(b)
        return val + b0

    def oracle(x):
        var = max(w0 + float(w @ x), 0.0)
        root = math.sqrt(2.0 * L * var)
        # one-sided derivative cap at var = 0 keeps the ascent direction finite
        slope = L / max(root, 1e-12)
        return root + float(b @ x) + b0, b + slope * w

    return inner_max(oracle, prob.X, cfg).upper


def _box_alpha_inf(b, w, w0, lo, hi, L):
    """min over u > 0 of  sum_j max(lo_j c_j, hi_j c_j) + w0 u + L / (2u),
    c_j = b_j + w_j u  (u = 1 / (2 alpha)). Exact scan over the breakpoints of
    the piecewise-linear part. Returns (value, u*)."""
    span = hi - lo
    base0 = float(lo @ b)
    slope0 = float(lo @ w) + w0
    # contribution span_j * max(b_j + w_j u, 0)
    nz = w != 0.0
    bp = np.full(b.shape, -1.0)
    bp[nz] = -b[nz] / w[nz]
    on_at_zero = (b > 0) | ((b == 0) & (w > 0))
    base = base0 + float(span[on_at_zero] @ b[on_at_zero])
    slope = slope0 + float(span[on_at_zero] @ w[on_at_zero])
    events = np.nonzero(nz & (bp > 0))[0]
    order = events[np.argsort(bp[events], kind="stable")]
    # changes in (base, slope) when crossing each breakpoint
    left = 0.0
    best = (math.inf, math.nan)

    def seg_min(base, slope, a, bnd):
        # minimize base + slope u + L/(2u) on (a, bnd]
        if slope > 0:
            u = math.sqrt(L / (2.0 * slope))
        else:
            u = math.inf
        u = min(max(u, a), bnd)
        if u <= 0:
            return math.inf, u
        return base + slope * u + L / (2.0 * u), u

    for j in order:
        right = bp[j]
        if right > left:
            cand = seg_min(base, slope, left, right)
            if cand[0] < best[0]:
                best = cand
        sgn = 1.0 if w[j] > 0 else -1.0  # w>0: switches on, w<0: switches off
        base += sgn * span[j] * b[j]
        slope += sgn * span[j] * w[j]
        left = right
    if slope > 0:
        cand = seg_min(base, slope, left, math.inf)
        if cand[0] < best[0]:
            best = cand
    elif slope == 0.0:
        # the objective decreases to `base` as u -> inf (alpha -> 0)
        if base < best[0]:
            best = (base, 2.0 * left + 1.0)
    else:
        raise DomainError("covariance proxy is not PSD along f")
    return best


def psi_hat_box(f, sign, prob):
    """Exact Psi_hat_sign(f) for a Box signal set, plus a subgradient in f."""
    X = prob.X
    f = np.asarray(f, dtype=float)
    L = prob.log_term
    b = sign * (prob.A.T @ f - prob.g)
    b0 = sign * (prob.a @ f - prob.c)
    if not np.any(f):
        x = np.where(b > 0, X.upper, X.lower)
        return float(b @ x) + b0, sign * (prob.A @ x + prob.a)
    w0, w = prob.quad_coeffs(f)
    val, u = _box_alpha_inf(b, w, w0, X.lower, X.upper, L)
    c = b + w * u
    x = np.where(c > 0, X.upper, X.lower)
    grad = sign * (prob.A @ x + prob.a) + 2.0 * u * (prob.M(x) @ f)
    return val + b0, grad


def solve_box(prob, cfg=SolverConfig(), f0=None):
    """Minimize Psi_hat over f for a Box signal set with the exact oracle."""
    if not isinstance(prob.X, Box):
        raise DomainError("solve_box needs a Box signal set")

    def obj(f):
        vp, gp = psi_hat_box(f, +1, prob)
        vm, gm = psi_hat_box(f, -1, prob)
        return 0.5 * (vp + vm), 0.5 * (gp + gm)

    x0 = np.zeros(prob.d) if f0 is None else np.asarray(f0, dtype=float)
    rep = outer_min(obj, x0, cfg, lower=0.0)
    f = rep.x
    vp, _ = psi_hat_box(f, +1, prob)
    vm, _ = psi_hat_box(f, -1, prob)
    digest = prob.problem().digest()
    return AffineEstimate(f.copy(), 0.5 * (vm - vp), max(0.5 * (vp + vm), 0.0), prob.epsilon, prob.K,
                          digest, vp, vm, rep.stalled, rep.history)


def direct_product_opt(U, V, A, a, M0, Ms, g, c, epsilon, K=1, cfg=SolverConfig()):
    """Signals x = (u, v) in U x V, observation A u + a + noise with covariance
    proxy M(v) = M0 + sum_j v_j Ms[j], functional g^T u + c.

    Minimizes  (phi_U(A^T f - g) + phi_U(g - A^T f)) / 2 + max_v sqrt(2 L f^T M(v) f)
    and returns (f*, kappa*, Opt).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    Ms = np.asarray(Ms, dtype=float)
    L = math.log(2.0 / epsilon) / K

    def noise(f):
        w = np.einsum("i,jik,k->j", f, Ms, f)
        sv, v = V.support(w)
        var = max(float(f @ M0 @ f) + sv, 0.0)
        root = math.sqrt(2.0 * L * var)
        Mv = M0 + np.tensordot(v, Ms, axes=1)
        grad = (2.0 * L / root) * (Mv @ f) if root > 0 else np.zeros_like(f)
        return root, grad

    def obj(f):
        sp, up = U.support(A.T @ f - g)
        sm, um = U.support(g - A.T @ f)
        nv, ng = noise(f)
        return 0.5 * (sp + sm) + nv, 0.5 * (A @ up - A @ um) + ng

    rep = outer_min(obj, np.zeros(A.shape[0]), cfg, lower=0.0)
    f = rep.x
    opt, _ = obj(f)
    sp, _ = U.support(A.T @ f - g)
    sm, _ = U.support(g - A.T @ f)
    kappa = 0.5 * (sm - sp) - a @ f + c
    return f, float(kappa), float(opt)


def _span_of_differences(X, n_dir=None, seed=0):
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    dirs = [np.eye(n)[i] for i in range(n)] + [-np.eye(n)[i] for i in range(n)]
    dirs += list(rng.standard_normal((n_dir or 2 * n, n)))
    pts = np.array([X.linear_oracle(u) for u in dirs])
    return pts[1:] - pts[0]


def consistency_check(g, A, X, tol=1e-8):
    """True when g is orthogonal to Ker(A) intersected with span(X - X)."""
    g = np.asarray(g, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[1]
    kerA = null_space(A, rcond=1e-9) if A.size else np.eye(n)
    diffs = _span_of_differences(X)
    span = orth(diffs.T, rcond=1e-9) if np.any(diffs) else np.zeros((n, 0))
    if kerA.shape[1] == 0 or span.shape[1] == 0:
        return True
    # u = kerA p = span q  <=>  [kerA, -span] [p; q] = 0
    coef = null_space(np.hstack([kerA, -span]), rcond=1e-9)
    if coef.shape[1] == 0:
        return True
    inter = orth(kerA @ coef[: kerA.shape[1]])
    proj = inter @ (inter.T @ g)
    return bool(np.linalg.norm(proj) <= tol * max(np.linalg.norm(g), 1e-300))


def near_opt_factor(epsilon):
    """sqrt(2 ln(2/eps)) / q_N(1 - eps): the gap between the affine risk bound
    and the minimax risk in the direct-product Gaussian case."""
    if not 0.0 < epsilon < 0.5:
        raise DomainError("epsilon must lie in (0, 1/2)")
    return math.sqrt(2.0 * math.log(2.0 / epsilon)) / gauss_quantile(1.0 - epsilon)


def random_frame(rng, rows, cols):
    """Orthonormal columns from the QR factor of a Gaussian matrix, with the
    signs fixed by the diagonal of R."""
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s


def gen_problem(d, n, alpha, cond_theta, sigma, seed, epsilon=0.01, K=1):
    """A random instance with n > d: returns (exact, envelope) problems.

    X = {0 <= x_j <= j^(-alpha)}, A = U diag(s) V^T with geometric singular
    values s_i = cond^(-(i-1)/(d-1)), g >= 0 random with max_X g^T x = 2 and
    noise covariance M(x) = sigma^2 sum_j x_j Theta_j, Theta_j projectors
    of rank floor(d/2). The envelope freezes M at the largest point of X.
    """
    if n <= d:
        raise DomainError("need n > d")
    if cond_theta < 1:
        raise DomainError("cond_theta must be >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x4c49])))
    U = random_frame(rng, d, d)
    V = random_frame(rng, n, d)
    expo = np.arange(d) / (d - 1) if d > 1 else np.zeros(1)
    s = cond_theta ** (-expo)
    A = (U * s) @ V.T
    top = np.arange(1, n + 1, dtype=float) ** (-alpha)
    X = Box(np.zeros(n), top)
    g = rng.uniform(0.0, 1.0, n)
    g *= 2.0 / float(g @ top)
    r = d // 2
    Ms = np.empty((n, d, d))
    for j in range(n):
        Q = random_frame(rng, d, r)
        Ms[j] = sigma**2 * (Q @ Q.T)
    exact = SubGaussLinearProblem(A, np.zeros(d), np.zeros((d, d)), Ms, g, 0.0, X, epsilon, K)
    return exact, exact.envelope(top)
