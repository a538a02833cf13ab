"""Quadratic estimates from Gaussian observations via the quadratic lift.

Observation ``zeta = A [u; 1] + xi`` with ``xi ~ N(0, M(v))``; the functional
is ``F(u, v) = [u; 1]^T Q [u; 1] + q^T v``. Estimates have the form
``h^T zeta + zeta^T H zeta / 2 + kappa`` averaged over K observations.

With ``B = [A; e_{m+1}^T]`` and ``N = [H, h]``, the scaled lift bound splits as

    alpha Phi(h/alpha, H/alpha; M(v), B Z B^T)
        = alpha Upsilon0(H/alpha) + Tr((M(v) - Theta*) H)/2
          + Tr(Z B^T [blk(H, h) + N^T (alpha inv(Theta*) - H)^{-1} N] B)/2,

so for fixed alpha the maximum over (v, Z) separates into two support
functions. The infimum over alpha is a 1-D convex search.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .convex_geometry import Box, Singleton, SpectahedronSlice
from .errors import DimensionError, DomainError
from .linalg import as_sym, blockmat, eigh, sym
from .saddle_solver import SolverConfig, golden_min_1d, log_golden_min, outer_min
from .simple_families import GaussLiftFamily, box_reference

__all__ = [
    "QuadGaussProblem",
    "QuadEstimate",
    "psi_hat_quad",
    "psi_hat_quad_details",
    "optimize_quad",
    "build_quad_estimate",
    "apply_quad",
    "plugin_start",
    "EnergyResult",
    "energy_psi",
    "energy_opt",
    "sobolev_operator",
    "gen_indirect_problem",
    "energy_problem",
    "gen_consistency_problem",
    "opt_curve",
]


@dataclass
class QuadGaussProblem:
    A: np.ndarray          # d x (m+1)
    M0: np.ndarray         # d x d
    Ms: np.ndarray         # k x d x d
    V: object              # set of v in R^k
    Zset: object           # convex compact subset of {Z >= 0, Z[m, m] = 1}
    Q: np.ndarray          # (m+1) x (m+1)
    q: np.ndarray          # k
    fam: GaussLiftFamily
    epsilon: float
    K: int = 1

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d, m1 = self.A.shape
        self.M0 = as_sym(self.M0, d, "M0")
        self.Ms = np.asarray(self.Ms, dtype=float).reshape(-1, d, d)
        self.Q = as_sym(self.Q, m1, "Q")
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        if self.q.shape[0] != self.Ms.shape[0]:
            raise DimensionError("q and Ms disagree on the dimension of v")
        if self.fam.d != d:
            raise DimensionError("family dimension differs from the observation dimension")
        if self.Zset.shape != (m1, m1):
            raise DimensionError("Zset must live in S^(m+1)")
        if not 0 < self.epsilon < 1 or int(self.K) < 1:
            raise DomainError("need 0 < epsilon < 1 and K >= 1")
        self.K = int(self.K)
        self.B = np.vstack([self.A, np.eye(m1)[-1]])

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.A.shape[1] - 1

    @property
    def log_term(self):
        return math.log(2.0 / self.epsilon) / self.K

    def M(self, v):
        return self.M0 + np.tensordot(v, self.Ms, axes=1)

    def F(self, u, v):
        z = np.r_[u, 1.0]
        return float(z @ self.Q @ z + self.q @ v)

    def digest(self):
        hsh = hashlib.sha256()
        for arr in (self.A, self.M0, self.Ms, self.Q, self.q, self.fam.Theta_star,
                    np.array([self.fam.delta, self.fam.gamma, self.epsilon, self.K])):
            hsh.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return hsh.hexdigest()


@dataclass(frozen=True)
class QuadEstimate:
    h: np.ndarray
    H: np.ndarray
    kappa: float
    rho: float
    epsilon: float
    K: int
    problem_digest: str = ""
    psi_plus: float = math.nan
    psi_minus: float = math.nan
    gap: float = 0.0
    stalled: bool = False
    history: list = field(default_factory=list, repr=False, compare=False)

    def to_json(self):
        return json.dumps({
            "kind": "quad",
            "h": [float(v) for v in self.h],
            "H": [[float(v) for v in row] for row in self.H],
            "kappa": self.kappa,
            "rho": self.rho,
            "epsilon": self.epsilon,
            "K": self.K,
            "problem_digest": self.problem_digest,
        })

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        if obj.get("kind") != "quad":
            raise DomainError("not a quadratic estimate")
        return cls(np.asarray(obj["h"], float), np.asarray(obj["H"], float), float(obj["kappa"]),
                   float(obj["rho"]), float(obj["epsilon"]), int(obj["K"]), obj.get("problem_digest", ""))


@dataclass(frozen=True)
class QuadPsi:
    value: float
    alpha: float
    v: np.ndarray
    Z: np.ndarray
    grad_h: np.ndarray
    grad_H: np.ndarray
    gap: float


class _Scaled:
    """Pieces of the alpha-scaled lift bound for fixed (sign h, sign H)."""

    def __init__(self, h, H, prob):
        fam = prob.fam
        self.h, self.H, self.prob = h, H, prob
        self.w, self.vecs = eigh(fam.tilde(H))
        self.s = float(np.max(np.abs(self.w)))
        self.N = np.hstack([H, h[:, None]])
        self.SN = fam.sqrt @ self.N           # Theta*^{1/2} N
        self.VSN = self.vecs.T @ self.SN
        self.blk = blockmat(H, h)
        self.lin = -0.5 * float(np.vdot(fam.Theta_star, H))
        self.pen = fam.delta * (2.0 + fam.delta) / 2.0
        self.sq_fro = float(np.sum(self.w**2))
        self.vcoef = 0.5 * np.einsum("jkl,kl->j", prob.Ms, H)
        self.v0 = 0.5 * float(np.vdot(prob.M0, H))

    def alpha_floor(self):
        return self.s / self.prob.fam.gamma

    def upsilon0(self, alpha):
        w = self.w / alpha
        val = -0.5 * alpha * float(np.sum(np.log1p(-w)))
        if self.pen > 0:
            val += self.pen * self.sq_fro / (alpha - self.s)
        return val

    def P(self, alpha):
        # blk(H, h) + N^T (alpha inv(Theta*) - H)^{-1} N, via the H~ eigenbasis
        X = self.VSN / np.sqrt(alpha - self.w)[:, None]
        return sym(self.blk + X.T @ X)


def _value_at(sc, alpha, sgnQ, sgnq, want_argmax=False):
    prob = sc.prob
    val = sc.upsilon0(alpha) + sc.lin
    sv, v = prob.V.support(sc.vcoef - sgnq * prob.q)
    val += sc.v0 + sv
    C = 0.5 * prob.B.T @ sc.P(alpha) @ prob.B - sgnQ * prob.Q
    if isinstance(prob.Zset, SpectahedronSlice):
        lower, upper, Z = prob.Zset.support_bounds(C)
        gap = upper - lower
    else:
        upper, Z = prob.Zset.support(C)
        gap = 0.0
    val += upper + alpha * prob.log_term
    if want_argmax:
        return val, v, Z, gap
    return val


def psi_hat_quad_details(h, H, sign, prob, rel_width=1e-7):
    """Psi_hat_sign(h, H) with its maximizers and a subgradient in (h, H)."""
    d = prob.d
    h = np.asarray(h, dtype=float).reshape(d)
    H = as_sym(H, d, "H")
    sh, sH = sign * h, sign * H
    if not np.any(h) and not np.any(H):
        sv, v = prob.V.support(-sign * prob.q)
        if isinstance(prob.Zset, SpectahedronSlice):
            _, upper, Z = prob.Zset.support_bounds(-sign * prob.Q)
        else:
            upper, Z = prob.Zset.support(-sign * prob.Q)
        # Phi >= <grad Phi(0), .>, so the gradient at zero is a valid subgradient
        Zl = prob.B @ Z @ prob.B.T
        gh, gH = _grad_at(prob, np.zeros(d), np.zeros((d, d)), prob.M(v), Zl)
        return QuadPsi(sv + upper, 0.0, v, Z, sign * gh, sign * gH, 0.0)
    sc = _Scaled(sh, sH, prob)
    floor = sc.alpha_floor()
    if floor > 0:
        # alpha in [floor, inf): search ln(alpha - floor + tiny) with the floor itself a candidate
        alpha, val = log_golden_min(lambda a: _value_at(sc, max(a, floor), sign, sign),
                                    lo=1e-6 * floor, hi=1e6 * max(floor, 1.0), rel_width=rel_width, floor=floor)
        v_floor = _value_at(sc, floor, sign, sign)
        if v_floor < val:
            alpha, val = floor, v_floor
    else:
        alpha, val = log_golden_min(lambda a: _value_at(sc, a, sign, sign), rel_width=rel_width)
    val, v, Z, gap = _value_at(sc, alpha, sign, sign, want_argmax=True)
    Zl = sym(prob.B @ Z @ prob.B.T)
    Zl[d, d] = 1.0
    gh, gH = _grad_at(prob, sh / alpha, sH / alpha, prob.M(v), Zl)
    if floor > 0 and alpha <= floor * (1.0 + 1e-9):
        # alpha sits on the floor |H~| / gamma, which moves with H: add the
        # multiplier (right derivative in alpha) times the floor's gradient
        t = 1e-7 * floor
        mu = max((_value_at(sc, floor + t, sign, sign) - val) / t, 0.0)
        k = int(np.argmax(np.abs(sc.w)))
        u = prob.fam.sqrt @ sc.vecs[:, k]
        gH = gH + mu * np.sign(sc.w[k]) * np.outer(u, u) / prob.fam.gamma
    return QuadPsi(float(val), alpha, v, Z, sign * gh, sign * gH, gap)


def _grad_at(prob, h, H, Theta, Zl):
    return prob.fam.grad(h, H, Theta, Zl)


def psi_hat_quad(h, H, sign, prob):
    return psi_hat_quad_details(h, H, sign, prob).value


def _pack(h, H):
    return np.concatenate([h, H.ravel()])


def _unpack(x, d):
    h = x[:d]
    H = x[d:].reshape(d, d)
    return h, sym(H)


def build_quad_estimate(h, H, prob, stalled=False, history=None):
    a = psi_hat_quad_details(h, H, +1, prob)
    b = psi_hat_quad_details(h, H, -1, prob)
    rho = 0.5 * (a.value + b.value)
    kappa = 0.5 * (b.value - a.value)
    return QuadEstimate(np.asarray(h, float).copy(), sym(H), kappa, max(rho, 0.0), prob.epsilon, prob.K,
                        prob.digest(), a.value, b.value, a.gap + b.gap, stalled, history or [])


def optimize_quad(prob, cfg=SolverConfig(max_iter=400), start=None, fix_h_zero=False):
    """Minimize (Psi_hat_+ + Psi_hat_-)/2 over (h, H) by projected subgradient.

    ``start`` is an optional (h, H) warm start; ``fix_h_zero`` restricts the
    search to h = 0 (appropriate for problems symmetric under u -> -u).
    """
    d = prob.d
    h0, H0 = (np.zeros(d), np.zeros((d, d))) if start is None else start
    h0 = np.zeros(d) if fix_h_zero else np.asarray(h0, float)

    def obj(x):
        h, H = _unpack(x, d)
        a = psi_hat_quad_details(h, H, +1, prob)
        b = psi_hat_quad_details(h, H, -1, prob)
        gh = 0.0 * a.grad_h if fix_h_zero else 0.5 * (a.grad_h + b.grad_h)
        return 0.5 * (a.value + b.value), _pack(gh, 0.5 * (a.grad_H + b.grad_H))

    rep = outer_min(obj, _pack(h0, sym(H0)), cfg, lower=0.0)
    h, H = _unpack(rep.x, d)
    return build_quad_estimate(h, H, prob, rep.stalled, rep.history)


def plugin_start(prob):
    """(h, H) of the plug-in estimate [[H, h], [h^T, *]] = 2 (C^T Q C) with
    C B = I; requires B to have full column rank."""
    B = prob.B
    if np.linalg.matrix_rank(B) < B.shape[1]:
        raise DomainError("plug-in start needs B of full column rank")
    C = np.linalg.pinv(B)
    G = 2.0 * sym(C.T @ prob.Q @ C)
    d = prob.d
    return G[:d, d].copy(), G[:d, :d].copy()


def apply_quad(est, zetas, problem_digest=None):
    if problem_digest is not None and est.problem_digest and problem_digest != est.problem_digest:
        raise DomainError("estimate was built for a different problem")
    Zt = np.asarray(zetas, dtype=float)
    if Zt.ndim == 1:
        Zt = Zt[None, :]
    if Zt.shape[0] != est.K:
        raise DimensionError(f"expected {est.K} observations, got {Zt.shape[0]}")
    vals = Zt @ est.h + 0.5 * np.einsum("ki,ij,kj->k", Zt, est.H, Zt)
    return float(vals.mean() + est.kappa)


# energy of a signal in a spherical layer ------------------------------------

class EnergyResult(NamedTuple):
    eta: float
    kappa: float
    opt: float


def energy_psi(eta, alpha, sign, m, r, R, theta, sigma, epsilon):
    """Psi_hat_sign at (alpha, eta) for the estimate eta |zeta|^2 / 2 + kappa
    of |u|^2, r <= |u| <= R, zeta ~ N(u, s^2 I), s^2 in [theta sigma^2, sigma^2]."""
    s2 = sigma * sigma
    e = sign * eta
    if alpha <= s2 * abs(eta):
        return math.inf
    delta = 1.0 - math.sqrt(theta)
    val = -0.5 * m * alpha * math.log1p(-s2 * e / alpha)
    val += 0.5 * m * s2 * (1.0 - theta) * max(-e, 0.0)
    val += m * delta * (2.0 + delta) * s2 * s2 * eta * eta / (2.0 * (alpha - s2 * abs(eta)))
    coef = alpha * e / (2.0 * (alpha - s2 * e)) - sign
    val += max(coef * r * r, coef * R * R)
    val += alpha * math.log(2.0 / epsilon)
    return val


def _energy_alpha_min(eta, sign, m, r, R, theta, sigma, epsilon, rel_width=1e-9):
    floor = sigma * sigma * abs(eta)
    f = lambda a: energy_psi(eta, a, sign, m, r, R, theta, sigma, epsilon)
    if floor == 0.0:
        # eta = 0: the objective is (alpha ln(2/eps) + const), minimized as alpha -> 0
        return 0.0, f(1e-300)
    scale = max(floor, 1e-300)
    return log_golden_min(f, lo=1e-8 * scale, hi=1e4 * max(scale, 1.0) * m, rel_width=rel_width, floor=floor)


def energy_opt(m, r, R, theta, sigma, epsilon, rel_width=1e-9):
    """Best estimate of the form eta |zeta|^2 / 2 + kappa: minimizes
    (Psi_hat_+(alpha_+, eta) + Psi_hat_-(alpha_-, eta)) / 2 over three scalars."""
    if not (0.0 <= theta <= 1.0 and 0.0 <= r < R and sigma > 0 and 0 < epsilon < 1 and m >= 1):
        raise DomainError("invalid energy problem parameters")

    def both(eta):
        _, pp = _energy_alpha_min(eta, +1, m, r, R, theta, sigma, epsilon, rel_width)
        _, pm = _energy_alpha_min(eta, -1, m, r, R, theta, sigma, epsilon, rel_width)
        return pp, pm

    def obj(eta):
        pp, pm = both(eta)
        return 0.5 * (pp + pm)

    # eta of the plug-in estimate |zeta|^2 - m s^2 is 2; search a bracket that grows if needed
    span = 8.0 / (sigma * sigma)
    lo, hi = -span, span
    for _ in range(60):
        eta, val = golden_min_1d(obj, (lo, hi), tol=rel_width)
        width = hi - lo
        if eta - lo < 1e-3 * width:
            lo -= width
        elif hi - eta < 1e-3 * width:
            hi += width
        else:
            break
    ceiling = 0.5 * (R * R - r * r)
    if not val < ceiling:
        eta, val = 0.0, ceiling
        pp, pm = -r * r, R * R
    else:
        pp, pm = both(eta)
    return EnergyResult(float(eta), 0.5 * (pm - pp), float(val))


def energy_problem(m, r, R, theta, sigma, epsilon, K=1, gamma=0.99):
    """The energy problem in the generic quadratic-lift form (u in R^m, d = m)."""
    Ts, delta = box_reference(np.full(m, theta * sigma**2), np.full(m, sigma**2))
    fam = GaussLiftFamily(Ts, delta, gamma)
    A = np.hstack([np.eye(m), np.zeros((m, 1))])
    W = np.zeros((m + 1, m + 1))
    W[:m, :m] = np.eye(m)
    Zset = SpectahedronSlice(m + 1, W, lo=r * r, hi=R * R)
    V = Box([theta * sigma**2], [sigma**2])
    Ms = np.eye(m)[None, :, :]
    Q = W.copy()
    return QuadGaussProblem(A, np.zeros((m, m)), Ms, V, Zset, Q, np.zeros(1), fam, epsilon, K)


# indirect observations of a smooth signal -------------------------------------

def sobolev_operator(m):
    """S with ||S u||^2 = x(0)^2 + x'(0)^2 + int x''^2 for u_i = x(i/m):
    rows u_1, m (u_2 - u_1) and m^{3/2} second differences."""
    S = np.zeros((m, m))
    S[0, 0] = 1.0
    if m > 1:
        S[1, 0], S[1, 1] = -m, m
    c = m**1.5
    for k in range(2, m):
        S[k, k - 2], S[k, k - 1], S[k, k] = c, -2.0 * c, c
    return S


def gen_indirect_problem(d=24, m=64, cond=10.0, sigma=0.025, seed=0, epsilon=0.01, K=1, radius2=1.0, gamma=0.99):
    """Energy ||u||^2 / m of u in {||S u|| <= 1} from P u + N(0, Theta),
    Theta diagonal with entries in [0, sigma^2]. Returns (problem, P, S)."""
    if m <= d:
        raise DomainError("need m > d")
    from .linear_subgaussian import random_frame

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x494E44])))
    U = random_frame(rng, d, d)
    V = random_frame(rng, m, m)
    expo = np.arange(d) / (d - 1) if d > 1 else np.zeros(1)
    P = (U * cond ** (-expo)) @ V[:, :d].T
    S = sobolev_operator(m)
    A = np.hstack([P, np.zeros((d, 1))])
    Ts, delta = box_reference(np.zeros(d), np.full(d, sigma**2))
    fam = GaussLiftFamily(Ts, delta, gamma)
    W = np.zeros((m + 1, m + 1))
    W[:m, :m] = S.T @ S
    Zset = SpectahedronSlice(m + 1, W, hi=radius2)
    Vset = Box(np.zeros(d), np.full(d, sigma**2))
    Ms = np.zeros((d, d, d))
    for j in range(d):
        Ms[j, j, j] = 1.0
    Q = np.zeros((m + 1, m + 1))
    Q[:m, :m] = np.eye(m) / m
    prob = QuadGaussProblem(A, np.zeros((d, d)), Ms, Vset, Zset, Q, np.zeros(d), fam, epsilon, K)
    return prob, P, S


def gen_consistency_problem(d=4, m=3, R2=1.0, sigma=0.5, seed=0, epsilon=0.01, K=1, gamma=0.99):
    """A small problem where B = [A; e] has full column rank and the noise is
    known (V a single point): u in the ball |u|^2 <= R2, F a random quadratic."""
    if d < m:
        raise DomainError("need d >= m for full column rank")
    from .linear_subgaussian import random_frame

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x434F4E])))
    A = np.hstack([random_frame(rng, d, m) * rng.uniform(0.5, 1.5, m), 0.1 * rng.standard_normal((d, 1))])
    Qm = rng.standard_normal((m + 1, m + 1))
    Q = sym(Qm) / math.sqrt(m + 1)
    W = np.zeros((m + 1, m + 1))
    W[:m, :m] = np.eye(m)
    Zset = SpectahedronSlice(m + 1, W, hi=R2)
    fam = GaussLiftFamily(sigma**2 * np.eye(d), 0.0, gamma)
    V = Singleton(np.zeros(1))
    Ms = np.zeros((1, d, d))
    return QuadGaussProblem(A, sigma**2 * np.eye(d), Ms, V, Zset, Q, np.zeros(1), fam, epsilon, K)


def opt_curve(prob, Ks, cfg=SolverConfig(max_iter=300), start=None):
    """Estimates for an increasing sequence of K, each warm-started from the
    previous one. Psi_hat at fixed (h, H) cannot grow with K, so the returned
    risks are nonincreasing."""
    from dataclasses import replace

    out = []
    for K in sorted(Ks):
        pk = replace(prob, K=int(K))
        est = optimize_quad(pk, cfg, start=start)
        out.append(est)
        start = (est.h, est.H)
    return out
