"""Numerical lower bounds on the minimax epsilon-risk.

Both bounds are two-point arguments: if two admissible signals induce
observation laws that no test can tell apart with error probabilities below
epsilon, no estimate can have epsilon-risk below half the gap between their
functional values.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, xlogy
from scipy.stats import ncx2

from .errors import DomainError

__all__ = [
    "LowerBoundCert",
    "gauss_quantile",
    "gauss_cdf",
    "energy_density",
    "energy_cdf",
    "overlap",
    "energy_lower_bound",
    "indirect_lower_bound",
    "indirect_phi",
    "minimax_sandwich",
]


@dataclass(frozen=True)
class LowerBoundCert:
    kind: str
    params: dict
    overlap: float
    bound: float
    epsilon: float
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("overlap", "bound", "epsilon"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_json(self):
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return json.dumps({"kind": self.kind, "params": params, "overlap": self.overlap,
                           "bound": self.bound, "epsilon": self.epsilon})


# standard normal ----------------------------------------------------------

_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def gauss_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def gauss_quantile(p):
    """Inverse standard normal CDF: Acklam's rational approximation followed
    by one Halley (second-order Newton) step on the erfc-based CDF."""
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    lo = 0.02425
    if p < lo:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p > 1.0 - lo:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    # refine against the erfc-based CDF, using the smaller tail for accuracy
    if p < 0.5:
        e = gauss_cdf(x) - p
    else:
        e = (1.0 - p) - 0.5 * math.erfc(x / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# noncentral chi-square ----------------------------------------------------

def _log_chi2_pdf(k, y):
    # log density of central chi-square with k degrees of freedom at y > 0
    h = 0.5 * k
    return xlogy(h - 1.0, y) - 0.5 * y - h * math.log(2.0) - gammaln(h)


def energy_density(s, m, r, sigma):
    """Density at s of ||eta + xi||^2, eta uniform on the radius-r sphere in
    R^m, xi ~ N(0, sigma^2 I): a sigma^2-scaled noncentral chi-square with m
    degrees of freedom and noncentrality r^2/sigma^2.

    Poisson-mixture series summed in log space outward from its largest
    term, stopping once terms drop below 1e-15 of the running sum.
    """
    if m < 1 or r < 0 or sigma <= 0:
        raise DomainError("need m >= 1, r >= 0, sigma > 0")
    if s < 0:
        return 0.0
    y = s / sigma**2
    lam = (r / sigma) ** 2
    scale = 1.0 / sigma**2
    if y == 0.0:
        # only the k = 0 term can be nonzero
        if m == 2:
            return scale * 0.5 * math.exp(-0.5 * lam)
        return math.inf if m < 2 else 0.0
    if lam == 0.0:
        return scale * math.exp(_log_chi2_pdf(m, y))
    half = 0.5 * lam

    def log_term(k):
        return -half + k * math.log(half) - gammaln(k + 1.0) + _log_chi2_pdf(m + 2 * k, y)

    # the term ratio peaks where k (k + m/2) ~ lam y / 4
    k0 = max(0, int(round(0.5 * (-0.5 * m + math.sqrt(0.25 * m * m + lam * y)))))
    top = log_term(k0)
    total = 1.0
    k = k0 + 1
    while True:
        t = math.exp(log_term(k) - top)
        total += t
        if t < 1e-15 * total:
            break
        k += 1
    k = k0 - 1
    while k >= 0:
        t = math.exp(log_term(k) - top)
        total += t
        if t < 1e-15 * total:
            break
        k -= 1
    return scale * math.exp(top + math.log(total))


def energy_cdf(s, m, r, sigma):
    return ncx2.cdf(np.asarray(s, dtype=float) / sigma**2, m, (r / sigma) ** 2)


def _logpdf(s, m, r, sigma):
    return ncx2.logpdf(np.asarray(s, dtype=float) / sigma**2, m, (r / sigma) ** 2) - 2.0 * math.log(sigma)


def overlap(m, r1, sigma1, r2, sigma2, n_grid=2001):
    """Integral over s >= 0 of min(q1(s), q2(s)) for two energy densities.

    The densities cross at most a few times; the crossings are located on a
    grid spanning both bulks and refined by Brent's method, and the integral
    is assembled from exact CDF differences between crossings.
    """
    if m < 1 or r1 < 0 or r2 < 0 or sigma1 <= 0 or sigma2 <= 0:
        raise DomainError("invalid energy-density parameters")
    if r1 == r2 and sigma1 == sigma2:
        return 1.0
    p1 = (m, r1, sigma1)
    p2 = (m, r2, sigma2)
    mu = [r * r + m * s * s for (_, r, s) in (p1, p2)]
    sd = [math.sqrt(2.0 * m * s**4 + 4.0 * s * s * r * r) for (_, r, s) in (p1, p2)]
    lo = max(0.0, min(mu[i] - 40.0 * sd[i] for i in range(2)))
    hi = max(mu[i] + 40.0 * sd[i] for i in range(2))
    grid = np.linspace(lo, hi, n_grid)
    if lo == 0.0:
        grid = grid[1:]

    def diff(s):
        return float(_logpdf(s, *p1) - _logpdf(s, *p2))

    with np.errstate(divide="ignore", invalid="ignore"):
        dv = _logpdf(grid, *p1) - _logpdf(grid, *p2)
    ok = np.isfinite(dv)
    grid, dv = grid[ok], dv[ok]
    cuts = [0.0]
    for i in np.nonzero(np.sign(dv[:-1]) * np.sign(dv[1:]) < 0)[0]:
        cuts.append(brentq(diff, grid[i], grid[i + 1], xtol=1e-12 * max(1.0, grid[i]), rtol=1e-14))
    cuts.append(math.inf)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if math.isinf(b):
            mid = max(a, grid[-1]) + 1.0
            mid = grid[-1] if a < grid[-1] else mid
        else:
            mid = 0.5 * (a + b) if a > 0 else (grid[0] if b > grid[0] else 0.5 * b)
        low = p1 if diff(mid) <= 0 else p2
        fa = float(energy_cdf(a, *low)) if a > 0 else 0.0
        fb = 1.0 if math.isinf(b) else float(energy_cdf(b, *low))
        total += max(fb - fa, 0.0)
    return float(min(max(total, 0.0), 1.0))


def energy_lower_bound(m, r, R, theta, sigma, epsilon, ladder=1.05, n_r=5):
    """Two-point lower bound for estimating ||u||^2 over r <= ||u|| <= R from
    u + N(0, s^2 I), s^2 in [theta sigma^2, sigma^2].

    Candidate bounds b run over a geometric ladder below (R^2 - r^2)/2. A
    value is accepted when some admissible pair (r1, s1), (r2, s2) with
    r2^2 - r1^2 = 2b has overlap > 2 epsilon. The largest accepted value is
    located by bisection over the ladder index.
    """
    if not (0.0 <= theta <= 1.0 and 0.0 <= r <= R and sigma > 0 and 0 < epsilon < 0.5):
        raise DomainError("invalid energy lower-bound parameters")
    b_max = 0.5 * (R * R - r * r)
    if b_max <= 0:
        return LowerBoundCert("energy_two_point", {"r1": r, "r2": R, "sigma1": sigma, "sigma2": sigma},
                              1.0, 0.0, epsilon)
    thresh = 2.0 * epsilon
    s2min = theta * sigma * sigma

    def witness(b):
        best = None
        r1_hi = math.sqrt(max(R * R - 2.0 * b, 0.0))
        if r1_hi < r:
            return None
        r1s = np.unique(np.r_[r1_hi, np.linspace(r, r1_hi, n_r)])[::-1]
        # noise pairs: equal noise, and the pair whose means match
        v2 = max(sigma * sigma - 2.0 * b / m, s2min)
        pairs = [(sigma, sigma), (sigma, math.sqrt(v2))]
        if theta < 1.0:
            pairs += [(sigma, math.sqrt(s2min + t * (v2 - s2min))) for t in (0.25, 0.5, 0.75)]
            pairs += [(math.sqrt(s2min), math.sqrt(s2min))]
        for r1 in r1s:
            r2 = math.sqrt(r1 * r1 + 2.0 * b)
            if r2 > R * (1 + 1e-12):
                continue
            r2 = min(r2, R)
            for s1, s2 in pairs:
                if s2 <= 0:
                    continue
                ov = overlap(m, r1, s1, r2, s2)
                if best is None or ov > best[0]:
                    best = (ov, r1, r2, s1, s2)
                if ov > thresh:
                    return best
        return best if best is not None and best[0] > thresh else None

    # ladder b_j = b_max / ladder^j, j = 0 .. J
    J = int(math.ceil(math.log(b_max / (1e-12 * max(b_max, 1.0))) / math.log(ladder))) if b_max > 0 else 0
    J = min(J, 2000)
    good_j, good_w = None, None
    w = witness(b_max)
    if w is not None:
        good_j, good_w = 0, w
    else:
        lo_j, hi_j = 0, None  # lo_j rejected
        j = 1
        while True:
            w = witness(b_max / ladder**j)
            if w is not None:
                hi_j, good_w = j, w
                break
            lo_j = j
            if j >= J:
                break
            j = min(2 * j, J)
        if hi_j is not None:
            while hi_j - lo_j > 1:
                mid = (lo_j + hi_j) // 2
                w = witness(b_max / ladder**mid)
                if w is not None:
                    hi_j, good_w = mid, w
                else:
                    lo_j = mid
            good_j = hi_j
    if good_j is None:
        return LowerBoundCert("energy_two_point", {"r1": r, "r2": r, "sigma1": sigma, "sigma2": sigma},
                              1.0, 0.0, epsilon)
    ov, r1, r2, s1, s2 = good_w
    bound = 0.5 * (r2 * r2 - r1 * r1)
    return LowerBoundCert("energy_two_point", {"r1": r1, "r2": r2, "sigma1": s1, "sigma2": s2},
                          ov, bound, epsilon)


# indirect observations -----------------------------------------------------

def indirect_phi(w, P, sigma, epsilon, scale=1.0):
    """scale * ||w||^2 (1 - theta(w)^2) / 2 with theta(w) = max(1 - rho/||Pw||, 0),
    rho = 2 sigma q_N(1 - eps): w and theta(w) w cannot be told apart reliably."""
    rho = 2.0 * sigma * gauss_quantile(1.0 - epsilon)
    t = float(np.linalg.norm(P @ w))
    th = max(1.0 - rho / t, 0.0) if t > 0 else 0.0
    return 0.5 * scale * float(w @ w) * (1.0 - th * th)


def _to_boundary(w, S):
    n = float(np.linalg.norm(S @ w))
    return w / n if n > 0 else w


def _top_gen_eig(A, B):
    # top eigenvector of A relative to B (B positive definite)
    L = np.linalg.cholesky(B)
    Li = np.linalg.inv(L)
    w, v = np.linalg.eigh(Li @ A @ Li.T)
    return Li.T @ v[:, -1]


def indirect_lower_bound(P, S, sigma, epsilon, scale=1.0, n_random=200, seed=0):
    """Suboptimal maximization of ``indirect_phi`` over {w : ||S w|| <= 1}.

    Candidates: top directions of ||w||^2 - lam ||P w||^2 relative to ||S w||^2
    for a log-spaced range of lam (lam = 0 is the largest-norm direction, large
    lam approaches the kernel of P), the best of those restricted to Ker P,
    and random boundary probes; the best candidate is polished by a line
    search in its scale and random coordinate moves.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    SS = S.T @ S
    PP = P.T @ P
    rng = np.random.default_rng(seed)

    def val(w):
        return indirect_phi(w, P, sigma, epsilon, scale)

    cands = []
    pn = max(float(np.linalg.norm(PP, 2)), 1e-300)
    for lam in np.r_[0.0, np.logspace(-4, 8, 49)] / pn:
        v = _top_gen_eig(np.eye(n) - lam * PP, SS)
        cands.append(_to_boundary(v, S))
    from scipy.linalg import null_space
    N = null_space(P, rcond=1e-10)
    if N.shape[1] > 0:
        v = N @ _top_gen_eig(N.T @ N, N.T @ SS @ N)
        cands.append(_to_boundary(v, S))
    for _ in range(n_random):
        cands.append(_to_boundary(rng.standard_normal(n), S))
    scores = [val(w) for w in cands]
    best_i = int(np.argmax(scores))
    w, best = cands[best_i], scores[best_i]
    # polish: random moves kept on the ellipsoid boundary
    step = 0.1
    for it in range(400):
        trial = _to_boundary(w + step * float(np.linalg.norm(w)) * rng.standard_normal(n) / math.sqrt(n), S)
        v = val(trial)
        if v > best:
            w, best = trial, v
        elif it % 40 == 39:
            step *= 0.5
    rho = 2.0 * sigma * gauss_quantile(1.0 - epsilon)
    t = float(np.linalg.norm(P @ w))
    th = max(1.0 - rho / t, 0.0) if t > 0 else 0.0
    return LowerBoundCert("indirect_two_point", {"w": w, "theta": th, "rho": rho}, math.nan, best, epsilon)


def minimax_sandwich(opt_value, cert, tol=1e-9):
    """opt_value / cert.bound; the ratio must be at least one."""
    if not cert.bound > 0:
        raise DomainError("zero lower bound: report the validity property only")
    ratio = opt_value / cert.bound
    if ratio < 1.0 - tol:
        raise AssertionError(f"lower bound {cert.bound} exceeds the certified risk {opt_value}")
    return float(ratio)
