"""Samplers and empirical checks of certified risk bounds.

Randomness comes from Philox streams keyed by (seed, stream, index), so the
draws of any single trial can be regenerated on their own.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError

__all__ = [
    "philox",
    "Trial",
    "CoverageRow",
    "CoverageReport",
    "coverage_threshold",
    "sample_gauss",
    "sample_discrete",
    "coverage",
    "coverage_energy",
    "coverage_quad",
    "coverage_discrete",
    "coverage_linear",
    "plugin_baselines",
]

STREAM_PROBLEM, STREAM_SOLVER, STREAM_MC = 1, 2, 3


def philox(seed, stream=STREAM_MC, index=0):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), int(index)])))


@dataclass(frozen=True)
class Trial:
    seed: int
    signal: object
    estimate_value: float
    true_functional: float
    violated: bool


def _cov_factor(C, tol=1e-8):
    C = 0.5 * (np.asarray(C, float) + np.asarray(C, float).T)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(C)
        if w[0] < -tol:
            raise DomainError(f"covariance has eigenvalue {w[0]:.3g} < 0")
        return V * np.sqrt(np.clip(w, 0.0, None))


def sample_gauss(u, v, prob, K, seed, index=0):
    """K draws of A [u; 1] + N(0, M(v)) for a quadratic Gaussian problem."""
    mean = prob.A @ np.r_[np.asarray(u, float), 1.0]
    L = _cov_factor(prob.M(np.asarray(v, float)))
    rng = philox(seed, STREAM_MC, index)
    xi = rng.standard_normal((int(K), mean.size))
    return [mean + L @ row for row in xi]


def sample_discrete(mu, K, seed, index=0):
    """K category indices (0-based) by inverse-CDF sampling."""
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or np.any(mu < -1e-12) or abs(mu.sum() - 1.0) > 1e-9:
        raise DomainError("mu must be a probability vector")
    cdf = np.cumsum(np.clip(mu, 0.0, None))
    cdf /= cdf[-1]
    rng = philox(seed, STREAM_MC, index)
    idx = np.searchsorted(cdf, rng.uniform(size=int(K)), side="right")
    return np.minimum(idx, mu.size - 1).tolist()


def coverage_threshold(epsilon, n_trials):
    return epsilon + 3.0 * math.sqrt(epsilon * (1.0 - epsilon) / n_trials)


@dataclass(frozen=True)
class CoverageRow:
    signal_id: int
    n_trials: int
    violations: int
    rho: float
    epsilon: float
    passed: bool

    @property
    def frequency(self):
        return self.violations / self.n_trials


@dataclass
class CoverageReport:
    rows: list
    threshold: float
    trials: list = field(default_factory=list, repr=False)

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    @property
    def max_frequency(self):
        return max(r.frequency for r in self.rows)

    def to_csv(self):
        lines = ["signal_id,n_trials,violations,rho,epsilon,pass"]
        for r in self.rows:
            lines.append(f"{r.signal_id},{r.n_trials},{r.violations},{r.rho!r},{r.epsilon!r},{int(r.passed)}")
        return "\n".join(lines) + "\n"


def coverage(draw_estimates, signals, truth, rho, epsilon, n_trials, seed, keep_trials=False):
    """Empirical check of P(|estimate - truth| > rho) <= epsilon at each signal.

    ``draw_estimates(signal, n, rng)`` returns n independent estimate values;
    ``truth(signal)`` the functional. Each signal gets its own stream.
    """
    thr = coverage_threshold(epsilon, n_trials)
    rows, trials = [], []
    for i, sig in enumerate(signals):
        rng = philox(seed, STREAM_MC, i)
        est = np.asarray(draw_estimates(sig, int(n_trials), rng), dtype=float)
        g = float(truth(sig))
        bad = np.abs(est - g) > rho
        nv = int(bad.sum())
        rows.append(CoverageRow(i, int(n_trials), nv, float(rho), float(epsilon), nv / n_trials <= thr))
        if keep_trials:
            trials.extend(Trial(int(seed), sig, float(e), g, bool(b)) for e, b in zip(est, bad))
    return CoverageReport(rows, thr, trials)


def _batched(n, size, fn):
    out = []
    for start in range(0, n, size):
        out.append(fn(min(size, n - start)))
    return np.concatenate(out)


# per-problem drivers ----------------------------------------------------------

def coverage_energy(res, m, r, R, theta, sigma, epsilon, n_trials=10_000, seed=0, n_dir=1):
    """Coverage of eta |zeta|^2 / 2 + kappa for |u|^2 at |u| in {r, (r+R)/2, R}
    and noise levels at both ends of [theta sigma^2, sigma^2]."""
    rng = philox(seed, STREAM_PROBLEM, 0)
    sigs = []
    for norm in (r, 0.5 * (r + R), R):
        for _ in range(n_dir):
            u = rng.standard_normal(m)
            u *= norm / np.linalg.norm(u)
            for s2 in sorted({theta * sigma**2, sigma**2}):
                sigs.append((u, s2))

    def draw(sig, n, g):
        u, s2 = sig
        s = math.sqrt(s2)
        return _batched(n, 2000, lambda k: 0.5 * res.eta * np.sum((u + s * g.standard_normal((k, m)))**2, axis=1)
                        + res.kappa)

    return coverage(draw, sigs, lambda sig: float(sig[0] @ sig[0]), res.opt, epsilon, n_trials, seed)


def coverage_quad(est, prob, signals, n_trials=10_000, seed=0):
    """Coverage of a quadratic estimate on a Gaussian problem; signals are (u, v)."""
    K = est.K

    def draw(sig, n, g):
        u, v = sig
        mean = prob.A @ np.r_[u, 1.0]
        L = _cov_factor(prob.M(v))

        def chunk(k):
            Z = mean + g.standard_normal((k, K, mean.size)) @ L.T
            vals = Z @ est.h + 0.5 * np.einsum("nki,ij,nkj->nk", Z, est.H, Z)
            return vals.mean(axis=1) + est.kappa

        return _batched(n, 5000, chunk)

    return coverage(draw, signals, lambda sig: prob.F(*sig), est.rho, est.epsilon, n_trials, seed)


def coverage_discrete(est, prob, signals, n_trials=10_000, seed=0):
    """Coverage of Tr(h omega) + kappa; signals are distributions u. Sample
    counts are drawn as multinomials, which is the same law as K categorical
    draws and keeps the check fast at large K."""
    K = est.K
    h = est.h
    dh = np.diag(h)

    def draw(sig, n, g):
        p = prob.A @ sig
        p = np.clip(p, 0.0, None)
        p /= p.sum()

        def chunk(k):
            N = g.multinomial(K, p, size=k).astype(float)
            quad = np.einsum("ni,ij,nj->n", N, h, N) - N @ dh
            return quad / (K * (K - 1)) + est.kappa

        return _batched(n, 2000, chunk)

    return coverage(draw, signals, lambda sig: prob.F(sig), est.rho, est.epsilon, n_trials, seed)


def coverage_linear(est, prob, signals, n_trials=10_000, seed=0, noise="gauss"):
    """Coverage of <f, mean obs> + kappa on a sub-Gaussian linear problem.

    ``noise="rademacher"`` uses M(x)^{1/2} times a Rademacher vector, which is
    sub-Gaussian with the same matrix parameter but not Gaussian.
    """
    if noise not in ("gauss", "rademacher"):
        raise DomainError("noise must be 'gauss' or 'rademacher'")
    K = est.K

    def draw(sig, n, g):
        mean = prob.A @ sig + prob.a
        L = _cov_factor(prob.M(sig))
        d = mean.size

        def chunk(k):
            if noise == "gauss":
                E = g.standard_normal((k, K, d))
            else:
                E = g.choice(np.array([-1.0, 1.0]), size=(k, K, d))
            obs = mean + E @ L.T
            return obs.mean(axis=1) @ est.f + est.kappa

        return _batched(n, 5000, chunk)

    return coverage(draw, signals, lambda x: float(prob.g @ x + prob.c), est.rho, est.epsilon, n_trials, seed)


def plugin_baselines(zeta_list, cross=True):
    """Plug-in energy estimates: mean of zeta^T zeta, and zeta_1^T zeta_2
    (the latter needs two observations; pass ``cross=False`` to skip it)."""
    Z = [np.asarray(z, dtype=float) for z in zeta_list]
    if not Z:
        raise DimensionError("need at least one observation")
    out = {"plug_single": float(np.mean([z @ z for z in Z]))}
    if cross:
        if len(Z) < 2:
            raise DimensionError("the cross estimate needs two observations")
        out["plug_cross"] = float(Z[0] @ Z[1])
    return out
