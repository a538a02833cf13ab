"""Affine estimates of a linear functional from K observations drawn from a
simple family, with certified epsilon-risk.

For an observation direction f the estimate is ``<f, mean(obs)> + kappa``.
Its risk is controlled by

    Psi_hat_s(f) = inf_{alpha > 0} sup_{x in X} [alpha Phi(s f / alpha; A(x)) - s G(x)]
                   + alpha ln(2/eps) / K,        s = +1, -1,

through ``rho = (Psi_hat_+ + Psi_hat_-) / 2`` and
``kappa = (Psi_hat_- - Psi_hat_+) / 2``. Any f yields a valid pair; the
optimizer only makes rho small.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError
from .saddle_solver import SolverConfig, inner_max, log_golden_min, outer_min
from .simple_families import SubGaussianFamily

__all__ = [
    "SubGaussAffineMap",
    "EstimationProblem",
    "AffineEstimate",
    "PsiHat",
    "psi_plus",
    "psi_hat",
    "psi_hat_details",
    "psi_hat_maxmin",
    "build_estimate",
    "optimize",
    "apply",
    "objective",
    "subgaussian_problem",
]


class SubGaussAffineMap:
    """x -> (A x + a, M0 + sum_j x_j M_j) for the sub-Gaussian family."""

    def __init__(self, A, a=None, M0=None, Ms=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        d, n = A.shape
        self.A = A
        self.a = np.zeros(d) if a is None else np.asarray(a, dtype=float)
        self.M0 = np.zeros((d, d)) if M0 is None else np.asarray(M0, dtype=float)
        self.Ms = np.zeros((n, d, d)) if Ms is None else np.asarray(Ms, dtype=float)
        if self.a.shape != (d,) or self.M0.shape != (d, d) or self.Ms.shape != (n, d, d):
            raise DimensionError("inconsistent shapes in the affine map")
        self.d, self.n = d, n

    def __call__(self, x):
        return self.A @ x + self.a, self.M0 + np.tensordot(x, self.Ms, axes=1)

    def M(self, x):
        return self.M0 + np.tensordot(x, self.Ms, axes=1)

    def vjp(self, x, dmu):
        dtheta, dTheta = dmu
        return self.A.T @ dtheta + np.tensordot(self.Ms, dTheta, axes=([1, 2], [0, 1]))

    def quad_coeffs(self, f):
        """(f^T M0 f, [f^T M_j f]_j)."""
        return float(f @ self.M0 @ f), np.einsum("i,jik,k->j", f, self.Ms, f)

    def arrays(self):
        return [self.A, self.a, self.M0, self.Ms]


@dataclass
class EstimationProblem:
    """Estimate G(x) = g^T x + c from K observations of a family member with
    parameter A_map(x), x ranging over the convex compact set X."""

    family: object
    A_map: object
    g: np.ndarray
    c: float
    X: object
    epsilon: float
    K: int = 1

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        self.c = float(self.c)
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError("epsilon must lie in (0, 1)")
        if int(self.K) < 1:
            raise DomainError("K must be a positive integer")
        self.K = int(self.K)
        if self.g.shape != self.X.shape:
            raise DimensionError("g does not match the signal set")

    @property
    def obs_dim(self):
        return self.A_map.d

    @property
    def log_term(self):
        return math.log(2.0 / self.epsilon) / self.K

    def G(self, x):
        return float(self.g @ x + self.c)

    def phi(self, f, mu):
        return self.family.phi(f, *mu)

    def digest(self):
        h = hashlib.sha256()
        for arr in self.A_map.arrays() + [self.g, np.array([self.c, self.epsilon, self.K])]:
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()

    def check_domain(self, n_probe=100, seed=0):
        """Probe that A_map(x) has PSD covariance at support points of X."""
        rng = np.random.default_rng(seed)
        for _ in range(n_probe):
            x = self.X.sample_boundary(rng)
            _, Theta = self.A_map(x)
            if np.linalg.eigvalsh(0.5 * (Theta + Theta.T))[0] < -1e-9:
                return False
        return True


@dataclass(frozen=True)
class PsiHat:
    value: float
    alpha: float
    x: np.ndarray
    grad: np.ndarray
    gap: float


def _inner(f_scaled, alpha, sign, prob, cfg, x0=None):
    fam, amap = prob.family, prob.A_map

    def oracle(x):
        mu = amap(x)
        val = alpha * prob.phi(f_scaled, mu) - sign * prob.G(x)
        dmu = fam.grad_mu(f_scaled, *mu)
        grad = amap.vjp(x, tuple(alpha * t for t in dmu)) - sign * prob.g
        return val, grad

    return inner_max(oracle, prob.X, cfg, x0=x0)


def psi_plus(f, alpha, prob, cfg=SolverConfig(), sign=1):
    """sup_{x in X} [alpha Phi(sign f / alpha; A(x)) - sign G(x)] as a SolveReport
    (``report.upper`` is the certified value)."""
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    f = np.asarray(f, dtype=float)
    return _inner(sign * f / alpha, alpha, sign, prob, cfg)


def _zero_direction(sign, prob):
    # Phi(h) >= <grad Phi(0), h>, so sign * grad Phi(0; A(x*)) is a subgradient at f = 0
    val, x = prob.X.support(-sign * prob.g)
    grad = sign * prob.family.grad(np.zeros(prob.obs_dim), *prob.A_map(x))
    return PsiHat(val - sign * prob.c, 0.0, x, grad, 0.0)


def psi_hat_details(f, sign, prob, cfg=SolverConfig()):
    """Psi_hat_sign(f) with the minimizing alpha, the inner maximizer and a
    subgradient in f (Danskin)."""
    f = np.asarray(f, dtype=float)
    if f.shape != (prob.obs_dim,):
        raise DimensionError("f has the wrong dimension")
    if not np.any(f):
        return _zero_direction(sign, prob)
    L = prob.log_term
    cache = {}

    def total(alpha):
        rep = psi_plus(f, alpha, prob, cfg, sign)
        cache[alpha] = rep
        return rep.upper + alpha * L

    alpha, val = log_golden_min(total)
    rep = cache.get(alpha) or psi_plus(f, alpha, prob, cfg, sign)
    mu = prob.A_map(rep.x)
    grad = sign * prob.family.grad(sign * f / alpha, *mu)
    return PsiHat(float(val), alpha, rep.x, grad, rep.gap_estimate)


def psi_hat(f, sign, prob, cfg=SolverConfig()):
    return psi_hat_details(f, sign, prob, cfg).value


def psi_hat_maxmin(f, sign, prob, cfg=SolverConfig()):
    """The same quantity computed in the opposite order: the outer maximum
    over X of the inner infimum over alpha. Used as an independent check."""
    f = np.asarray(f, dtype=float)
    if not np.any(f):
        return _zero_direction(sign, prob).value
    fam, amap, L = prob.family, prob.A_map, prob.log_term

    def oracle(x):
        mu = amap(x)
        alpha, val = log_golden_min(lambda a: a * prob.phi(sign * f / a, mu) + a * L, lo=1e-9, hi=1e9)
        val -= sign * prob.G(x)
        dmu = fam.grad_mu(sign * f / alpha, *mu)
        return val, amap.vjp(x, tuple(alpha * t for t in dmu)) - sign * prob.g

    return inner_max(oracle, prob.X, cfg).upper


@dataclass(frozen=True)
class AffineEstimate:
    f: np.ndarray
    kappa: float
    rho: float
    epsilon: float
    K: int
    problem_digest: str = ""
    psi_plus: float = math.nan
    psi_minus: float = math.nan
    stalled: bool = False
    history: list = field(default_factory=list, repr=False, compare=False)

    def to_json(self):
        return json.dumps({
            "kind": "affine",
            "f": [float(v) for v in self.f],
            "kappa": self.kappa,
            "rho": self.rho,
            "epsilon": self.epsilon,
            "K": self.K,
            "problem_digest": self.problem_digest,
        })

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        if obj.get("kind") != "affine":
            raise DomainError("not an affine estimate")
        return cls(np.asarray(obj["f"], dtype=float), float(obj["kappa"]), float(obj["rho"]),
                   float(obj["epsilon"]), int(obj["K"]), obj.get("problem_digest", ""))


def build_estimate(f, prob, cfg=SolverConfig(), stalled=False):
    """Certified (f, kappa, rho) from any candidate direction f."""
    f = np.asarray(f, dtype=float)
    pp = psi_hat(f, +1, prob, cfg)
    pm = psi_hat(f, -1, prob, cfg)
    rho = 0.5 * (pp + pm)
    kappa = 0.5 * (pm - pp)
    return AffineEstimate(f.copy(), kappa, max(rho, 0.0), prob.epsilon, prob.K, prob.digest(), pp, pm, stalled)


def objective(f, prob, cfg=SolverConfig()):
    """(Psi_hat(f), subgradient)."""
    a = psi_hat_details(f, +1, prob, cfg)
    b = psi_hat_details(f, -1, prob, cfg)
    return 0.5 * (a.value + b.value), 0.5 * (a.grad + b.grad)


def optimize(prob, cfg=SolverConfig(), f0=None):
    """Minimize Psi_hat(f) = (Psi_hat_+(f) + Psi_hat_-(f)) / 2 over f."""
    x0 = np.zeros(prob.obs_dim) if f0 is None else np.asarray(f0, dtype=float)
    rep = outer_min(lambda f: objective(f, prob, cfg), x0, cfg, lower=0.0)
    est = build_estimate(rep.x, prob, cfg, stalled=rep.stalled)
    return AffineEstimate(est.f, est.kappa, est.rho, est.epsilon, est.K, est.problem_digest,
                          est.psi_plus, est.psi_minus, rep.stalled, rep.history)


def apply(est, obs, problem_digest=None):
    """<f, mean of the K observations> + kappa."""
    if problem_digest is not None and est.problem_digest and problem_digest != est.problem_digest:
        raise DomainError("estimate was built for a different problem")
    obs = np.asarray(obs, dtype=float)
    if obs.ndim == 1:
        obs = obs[None, :]
    if obs.shape[0] != est.K:
        raise DimensionError(f"expected {est.K} observations, got {obs.shape[0]}")
    if obs.shape[1] != len(est.f):
        raise DimensionError("observation dimension does not match the estimate")
    return float(est.f @ obs.mean(axis=0) + est.kappa)


def subgaussian_problem(A, g, X, epsilon, K=1, a=None, M0=None, Ms=None, c=0.0):
    """Convenience constructor for the sub-Gaussian family."""
    amap = SubGaussAffineMap(A, a, M0, Ms)
    return EstimationProblem(SubGaussianFamily(amap.d), amap, g, c, X, epsilon, K)
