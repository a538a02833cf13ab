"""Log-MGF majorants Phi(h; mu) for three simple families of distributions.

* sub-Gaussian vectors, ``Phi(h; theta, Theta) = theta^T h + h^T Theta h / 2``;
* quadratically lifted Gaussian vectors, ``Phi = Upsilon + Gamma``;
* quadratically lifted i.i.d. categorical samples, ``Phi_M``.

Each family evaluates Phi, its gradient in the convex argument and its
(super)gradient in the concave argument.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError, DomainError
from .linalg import as_sym, blockmat, eigh, require_pd, sym

__all__ = [
    "SubGaussianFamily",
    "GaussLiftFamily",
    "DiscreteLiftFamily",
    "subgaussian_phi",
    "gauss_lift_phi",
    "gauss_lift_grad",
    "discrete_lift_phi",
    "box_reference",
    "MgfReport",
    "mgf_dominates",
]


def _vec(x, d, name):
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise DimensionError(f"{name} must have shape ({d},), got {x.shape}")
    return x


class SubGaussianFamily:
    def __init__(self, d):
        self.d = int(d)

    def phi(self, h, theta, Theta):
        h = _vec(h, self.d, "h")
        theta = _vec(theta, self.d, "theta")
        Theta = np.asarray(Theta, dtype=float)
        if Theta.shape != (self.d, self.d):
            raise DimensionError("Theta has the wrong shape")
        return float(theta @ h + 0.5 * h @ Theta @ h)

    def grad(self, h, theta, Theta):
        """Gradient in h."""
        return np.asarray(theta, dtype=float) + sym(Theta) @ np.asarray(h, dtype=float)

    def grad_mu(self, h, theta, Theta):
        """Gradient in (theta, Theta); Phi is linear there."""
        h = np.asarray(h, dtype=float)
        return h.copy(), 0.5 * np.outer(h, h)


def subgaussian_phi(h, theta, Theta):
    return SubGaussianFamily(len(np.atleast_1d(h))).phi(h, theta, Theta)


class GaussLiftFamily:
    """Quadratic lift (zeta, zeta zeta^T) of zeta ~ N(theta, Theta).

    ``Theta_star`` is a positive definite reference covariance and ``delta``
    bounds the relative deviation of admissible Theta from it. The convex
    domain is ``R^d x H_gamma`` with
    ``H_gamma = {H : -gamma inv(Theta_star) <= H <= gamma inv(Theta_star)}``.
    """

    def __init__(self, Theta_star, delta=0.0, gamma=0.99):
        Ts = as_sym(Theta_star, name="Theta_star")
        require_pd(Ts, "Theta_star")
        if not 0.0 <= delta <= 2.0:
            raise DomainError("delta must lie in [0, 2]")
        if not 0.0 < gamma < 1.0:
            raise DomainError("gamma must lie in (0, 1)")
        self.d = Ts.shape[0]
        self.Theta_star = Ts
        self.delta = float(delta)
        self.gamma = float(gamma)
        w, u = eigh(Ts)
        self.sqrt = sym((u * np.sqrt(w)) @ u.T)
        self.inv = sym((u / w) @ u.T)
        self._pen = self.delta * (2.0 + self.delta) / 2.0

    # spectral pieces -------------------------------------------------
    def tilde(self, H):
        """H~ = Theta*^{1/2} H Theta*^{1/2}."""
        return sym(self.sqrt @ H @ self.sqrt)

    def tilde_norm(self, H):
        return float(np.max(np.abs(np.linalg.eigvalsh(self.tilde(H)))))

    def _spectral(self, H):
        w, v = eigh(self.tilde(H))
        s = float(np.max(np.abs(w)))
        if s >= 1.0:
            raise DomainError(f"spectral norm of H~ is {s:.6g} >= 1")
        return w, v, s

    def upsilon0(self, H):
        """Upsilon(H, Theta*): the Theta-free part of Upsilon."""
        w, _, s = self._spectral(sym(H))
        return float(-0.5 * np.sum(np.log1p(-w)) + self._pen * np.sum(w * w) / (1.0 - s))

    def _resolvent(self, v, w):
        # (inv(Theta*) - H)^{-1} = S (I - H~)^{-1} S
        SV = self.sqrt @ v
        return sym((SV / (1.0 - w)) @ SV.T)

    def _check_args(self, h, H, Theta, Z):
        d = self.d
        h = _vec(h, d, "h")
        H = as_sym(H, d, "H")
        Theta = as_sym(Theta, d, "Theta")
        Z = as_sym(Z, d + 1, "Z")
        if abs(Z[d, d] - 1.0) > 1e-9:
            raise DomainError("Z must have its corner entry equal to 1")
        return h, H, Theta, Z

    def phi(self, h, H, Theta, Z):
        h, H, Theta, Z = self._check_args(h, H, Theta, Z)
        w, v, s = self._spectral(H)
        R = self._resolvent(v, w)
        ups = -0.5 * np.sum(np.log1p(-w)) + 0.5 * np.vdot(Theta - self.Theta_star, H)
        ups += self._pen * np.sum(w * w) / (1.0 - s)
        N = np.hstack([H, h[:, None]])
        gam = 0.5 * np.vdot(Z, blockmat(H, h) + N.T @ R @ N)
        return float(ups + gam)

    def grad(self, h, H, Theta, Z):
        """Gradient in (h, H), a subgradient where ||H~|| has a tie."""
        h, H, Theta, Z = self._check_args(h, H, Theta, Z)
        d = self.d
        w, v, s = self._spectral(H)
        R = self._resolvent(v, w)
        N = np.hstack([H, h[:, None]])
        RNZ = R @ N @ Z
        g_h = Z[:d, d] + RNZ[:, d]
        Y = N @ Z @ N.T
        g_H = 0.5 * Z[:d, :d] + 0.5 * R @ Y @ R + RNZ[:, :d]
        g_H = g_H + 0.5 * R + 0.5 * (Theta - self.Theta_star)
        if self._pen > 0.0:
            F = float(np.sum(w * w))
            Ht = (v * w) @ v.T
            dF = 2.0 * self.sqrt @ Ht @ self.sqrt
            j = int(np.argmax(np.abs(w)))
            su = self.sqrt @ v[:, j]
            ds = math.copysign(1.0, w[j]) * np.outer(su, su)
            g_H = g_H + self._pen * (dF / (1.0 - s) + F * ds / (1.0 - s) ** 2)
        return g_h, sym(g_H)

    def grad_mu(self, h, H, Theta, Z):
        """Gradient in (Theta, Z); Phi is affine there."""
        h, H, Theta, Z = self._check_args(h, H, Theta, Z)
        w, v, _ = self._spectral(H)
        R = self._resolvent(v, w)
        N = np.hstack([H, h[:, None]])
        return 0.5 * H, sym(0.5 * (blockmat(H, h) + N.T @ R @ N))


def gauss_lift_phi(h, H, Theta, Z, fam):
    return fam.phi(h, H, Theta, Z)


def gauss_lift_grad(h, H, Theta, Z, fam):
    return fam.grad(h, H, Theta, Z)


def box_reference(lower, upper):
    """(Theta*, delta) for covariances in the diagonal box diag[lower, upper].

    Theta* is the largest element and delta = 1 - sqrt(min_i lower_i/upper_i),
    so every Theta in the box satisfies ||Theta^{1/2} Theta*^{-1/2} - I|| <= delta.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper <= 0) or np.any(lower < 0) or np.any(lower > upper):
        raise DomainError("need 0 <= lower <= upper with upper > 0")
    return np.diag(upper), float(1.0 - math.sqrt(float(np.min(lower / upper))))


class DiscreteLiftFamily:
    """Lifted observations of K i.i.d. categorical samples, M = floor(K/2)."""

    def __init__(self, d, M):
        if M < 1:
            raise DomainError("M must be a positive integer")
        self.d = int(d)
        self.M = int(M)

    @classmethod
    def from_samples(cls, d, K):
        if K < 2:
            raise DomainError("need K >= 2")
        return cls(d, K // 2)

    def _check(self, H, Z):
        H = np.asarray(H, dtype=float)
        Z = np.asarray(Z, dtype=float)
        shape = (self.d, self.d)
        if H.shape != shape or Z.shape != shape:
            raise DimensionError(f"H and Z must be {shape}")
        if np.min(Z) < -1e-9 or abs(Z.sum() - 1.0) > 1e-9:
            raise DomainError("Z must be a nonnegative matrix with unit sum")
        return H, np.clip(Z, 0.0, None)

    def phi(self, H, Z):
        H, Z = self._check(H, Z)
        M = self.M
        return float(M * logsumexp(H / M, b=Z))

    def grad(self, H, Z):
        """Gradient in H: the Z-weighted softmax of H/M."""
        H, Z = self._check(H, Z)
        e = Z * np.exp(H / self.M - np.max(H / self.M))
        return e / e.sum()

    def grad_mu(self, H, Z):
        H, Z = self._check(H, Z)
        x = H / self.M
        e = np.exp(x - np.max(x))
        return self.M * e / np.sum(Z * e)


def discrete_lift_phi(H, Z, fam):
    return fam.phi(H, Z)


@dataclass(frozen=True)
class MgfReport:
    log_mgf: float
    stderr: float
    phi: float
    ok: bool


def mgf_dominates(phi_value, sampler, n_samples, seed, n_sigma=3.0):
    """Compare an empirical log-MGF with a claimed majorant.

    ``sampler(rng, n)`` returns n draws of the linear statistic
    <(h, H), lifted observation>. The standard error is the delta-method
    error of the log of the sample mean of exp(statistic).
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    s = np.asarray(sampler(rng, int(n_samples)), dtype=float)
    shift = float(np.max(s))
    e = np.exp(s - shift)
    mean = float(e.mean())
    log_mgf = shift + math.log(mean)
    stderr = float(e.std(ddof=1) / math.sqrt(len(e)) / mean) if len(e) > 1 else math.inf
    return MgfReport(log_mgf, stderr, float(phi_value), log_mgf <= phi_value + n_sigma * stderr + 1e-12)
