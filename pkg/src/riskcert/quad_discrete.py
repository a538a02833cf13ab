"""Quadratic functionals of a discrete distribution from i.i.d. categorical samples.

Observations are K draws from ``p = A u`` with ``u`` a probability vector;
the functional ``u^T Qbar u`` is estimated by ``Tr(h omega) + kappa`` where
``omega`` averages the symmetrized pairwise outer products of the samples.
The signal set is relaxed to a convex set of matrices ``x ~ u u^T``.

For fixed ``beta`` and the plain matrix simplex, the maximization

    max_x  beta ln <W, x> - <Qbar, x>,    W = A^T exp(h / beta) A,

only sees the points ``(W_ij, Qbar_ij)`` of the simplex vertices, and its
dual is the 1-D convex problem

    min_{lam > 0}  max_ij (lam W_ij - Qbar_ij) - beta ln lam + beta ln beta - beta,

whose value at any lam is an upper bound. That is what makes the default
relaxation fast.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .convex_geometry import MatrixSimplex
from .errors import DimensionError, DomainError
from .linalg import as_sym, project_psd, sym
from .saddle_solver import SolverConfig, log_golden_min, outer_min

__all__ = [
    "DiscreteQuadProblem",
    "DiscreteEstimate",
    "qbar",
    "lifted_obs",
    "psi_hat_discrete",
    "psi_hat_discrete_details",
    "psd_multipliers",
    "plugin_h",
    "build_discrete_estimate",
    "optimize_discrete",
    "apply_discrete",
    "independence_defect",
    "gen_sensing",
    "independence_problem",
]


def qbar(Q, q):
    """Q + q 1^T + 1 q^T, so that u^T Qbar u = u^T Q u + 2 q^T u on the simplex."""
    q = np.asarray(q, dtype=float)
    Q = as_sym(Q, q.shape[0], "Q")
    one = np.ones_like(q)
    return Q + np.outer(q, one) + np.outer(one, q)


def lifted_obs(samples, d):
    """Average of (e_i e_j^T + e_j e_i^T)/2 over pairs i < j (0-based categories)."""
    s = np.asarray(samples, dtype=int).reshape(-1)
    K = s.size
    if K < 2:
        raise DomainError("need at least two samples")
    if s.min() < 0 or s.max() >= d:
        raise DomainError("category index out of range")
    n = np.bincount(s, minlength=d).astype(float)
    return (np.outer(n, n) - np.diag(n)) / (K * (K - 1))


@dataclass
class DiscreteQuadProblem:
    A: np.ndarray
    Qbar: np.ndarray
    epsilon: float
    K: int
    psd_cut: bool = False

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d, m = self.A.shape
        if np.any(self.A < 0) or np.max(np.abs(self.A.sum(axis=0) - 1.0)) > 1e-12:
            raise DomainError("A must be column-stochastic")
        self.Qbar = as_sym(self.Qbar, m, "Qbar")
        if int(self.K) < 2:
            raise DomainError("need K >= 2")
        if not 0 < self.epsilon < 1:
            raise DomainError("epsilon must lie in (0, 1)")
        self.K = int(self.K)
        self._iu = np.triu_indices(m)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.A.shape[1]

    @property
    def M(self):
        return self.K // 2

    @property
    def log_term(self):
        return math.log(2.0 / self.epsilon) / self.M

    def F(self, u):
        return float(u @ self.Qbar @ u)

    def digest(self):
        hsh = hashlib.sha256()
        for arr in (self.A, self.Qbar, np.array([self.epsilon, self.K, float(self.psd_cut)])):
            hsh.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return hsh.hexdigest()


@dataclass(frozen=True)
class DiscretePsi:
    value: float
    beta: float
    x: np.ndarray
    grad: np.ndarray
    gap: float


@dataclass(frozen=True)
class DiscreteEstimate:
    h: np.ndarray
    kappa: float
    rho: float
    epsilon: float
    K: int
    problem_digest: str = ""
    psi_plus: float = math.nan
    psi_minus: float = math.nan
    stalled: bool = False
    history: list = field(default_factory=list, repr=False, compare=False)
    multipliers: tuple = field(default=(None, None), repr=False, compare=False)

    def to_json(self):
        return json.dumps({
            "kind": "discrete",
            "h": [[float(v) for v in row] for row in self.h],
            "kappa": self.kappa,
            "rho": self.rho,
            "epsilon": self.epsilon,
            "K": self.K,
            "problem_digest": self.problem_digest,
        })

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        if obj.get("kind") != "discrete":
            raise DomainError("not a discrete estimate")
        return cls(np.asarray(obj["h"], float), float(obj["kappa"]), float(obj["rho"]),
                   float(obj["epsilon"]), int(obj["K"]), obj.get("problem_digest", ""))


def _weights(h, beta, A):
    # shift keeps exp() finite; ln <W, x> is corrected by the shift
    t = h / beta
    shift = float(t.max())
    E = np.exp(t - shift)
    return sym(A.T @ E @ A), E, shift


def _vertex_mix(m, iu, k1, k2, t):
    x = np.zeros((m, m))
    for k, wgt in ((k1, 1.0 - t), (k2, t)):
        if wgt == 0.0:
            continue
        i, j = iu[0][k], iu[1][k]
        if i == j:
            x[i, i] += wgt
        else:
            x[i, j] += 0.5 * wgt
            x[j, i] += 0.5 * wgt
    return x


def _fixed_beta(h, beta, sign, prob, S=None, want_x=False):
    """max_x beta ln <W, x> - <sign Qbar - S, x> over the matrix simplex via its dual."""
    W, E, shift = _weights(sign * h, beta, prob.A)
    iu = prob._iu
    w = W[iu]
    q = sign * prob.Qbar[iu] if S is None else (sign * prob.Qbar - S)[iu]
    # the maximizer has <W, x> in [w.min, w.max], so lam = beta / <W, x> is bracketed
    lo, hi = beta / w.max(), beta / w.min()

    def dual(lam):
        return float(np.max(lam * w - q)) - beta * math.log(lam)

    if hi / lo < 1.0 + 1e-12:
        lam = lo
        dval = dual(lam)
    else:
        lam, dval = log_golden_min(dual, lo=0.5 * lo, hi=2.0 * hi, rel_width=1e-12)
    val = dval + beta * math.log(beta) - beta + beta * shift
    if not want_x:
        return val
    # primal: mix the active vertices so that <W, x> = beta / lam
    scores = lam * w - q
    top = scores.max()
    act = np.flatnonzero(scores >= top - 1e-9 * max(1.0, abs(top)))
    target = beta / lam
    above = act[w[act] >= target]
    below = act[w[act] < target]
    if above.size and below.size:
        k1 = above[np.argmin(w[above])]
        k2 = below[np.argmax(w[below])]
        t = (w[k1] - target) / (w[k1] - w[k2])
    else:
        k1 = k2 = act[np.argmin(np.abs(w[act] - target))]
        t = 0.0
    x = _vertex_mix(prob.m, iu, k1, k2, t)
    wx = (1.0 - t) * w[k1] + t * w[k2]
    primal = beta * (math.log(wx) + shift) - ((1.0 - t) * q[k1] + t * q[k2])
    return val, x, max(0.0, val - primal), E


def psi_hat_discrete_details(h, sign, prob, S=None):
    """Psi_hat_sign(h) over the matrix simplex, with the maximizer and a
    subgradient in h.

    A PSD multiplier ``S`` adds ``<S, x>`` to the objective, which is >= 0 on
    PSD x; the result then bounds Psi_hat over the PSD-cut set, and the bound
    is exact at the best S. The subgradient in S is ``x``.
    """
    h = as_sym(h, prob.d, "h")
    L = prob.log_term
    if S is not None:
        S = as_sym(S, prob.m, "S")
        if np.linalg.eigvalsh(S)[0] < -1e-12 * max(1.0, float(np.abs(S).max())):
            raise DomainError("the multiplier S must be positive semidefinite")
    C = -sign * prob.Qbar if S is None else S - sign * prob.Qbar
    if not np.any(h):
        val, x = MatrixSimplex(prob.m).support(C)
        Z = prob.A @ x @ prob.A.T
        # grad of beta ln <Z, exp(h / beta)> at h = 0 is Z / sum(Z) for any beta
        return DiscretePsi(float(val), 0.0, x, sign * Z / Z.sum(), 0.0)
    scale = max(float(np.max(np.abs(h))), 1e-12)
    beta, val = log_golden_min(lambda b: _fixed_beta(h, b, sign, prob, S) + b * L,
                               lo=1e-4 * scale, hi=1e2 * scale, rel_width=1e-9)
    _, x, gap, E = _fixed_beta(h, beta, sign, prob, S, want_x=True)
    Z = prob.A @ x @ prob.A.T
    ZE = Z * E
    grad = sign * ZE / ZE.sum()
    return DiscretePsi(float(val), beta, x, sym(grad), gap)


def psi_hat_discrete(h, sign, prob, S=None):
    return psi_hat_discrete_details(h, sign, prob, S).value


def build_discrete_estimate(h, prob, multipliers=(None, None), stalled=False, history=None):
    a = psi_hat_discrete_details(h, +1, prob, multipliers[0])
    b = psi_hat_discrete_details(h, -1, prob, multipliers[1])
    rho = 0.5 * (a.value + b.value)
    return DiscreteEstimate(sym(h), 0.5 * (b.value - a.value), max(rho, 0.0), prob.epsilon, prob.K,
                            prob.digest(), a.value, b.value, stalled, history or [], multipliers)


def plugin_h(prob):
    """h with Tr(h A x A^T) = Tr(Qbar x) when A is invertible (pseudo-inverse otherwise)."""
    Ap = np.linalg.pinv(prob.A)
    return sym(Ap.T @ prob.Qbar @ Ap)


def _outer_h(prob, cfg, h0):
    d = prob.d

    def obj(z):
        h = sym(z.reshape(d, d))
        a = psi_hat_discrete_details(h, +1, prob)
        b = psi_hat_discrete_details(h, -1, prob)
        return 0.5 * (a.value + b.value), (0.5 * (a.grad + b.grad)).ravel()

    return outer_min(obj, h0.ravel(), cfg, lower=0.0)


def _outer_joint(prob, cfg, h0, Sp, Sm):
    d, m = prob.d, prob.m
    n1, n2 = d * d, d * d + m * m

    def split(z):
        return sym(z[:n1].reshape(d, d)), z[n1:n2].reshape(m, m), z[n2:].reshape(m, m)

    def proj(z):
        h, P, M = split(z)
        return np.concatenate([h.ravel(), project_psd(P).ravel(), project_psd(M).ravel()])

    def obj(z):
        h, P, M = split(z)
        a = psi_hat_discrete_details(h, +1, prob, P)
        b = psi_hat_discrete_details(h, -1, prob, M)
        g = np.concatenate([(0.5 * (a.grad + b.grad)).ravel(), 0.5 * a.x.ravel(), 0.5 * b.x.ravel()])
        return 0.5 * (a.value + b.value), g

    rep = outer_min(obj, np.concatenate([h0.ravel(), Sp.ravel(), Sm.ravel()]), cfg, project=proj, lower=0.0)
    h, P, M = split(rep.x)
    return rep, h, (project_psd(P), project_psd(M))


def optimize_discrete(prob, cfg=SolverConfig(max_iter=300, tol_rel=1e-6), h0=None, polish=False):
    """Minimize (Psi_hat_+ + Psi_hat_-)/2 over symmetric h.

    The search starts from ``h0`` (default: the plug-in h) over the matrix
    simplex. With the PSD cut, the h = 0 estimate certified by PSD multipliers
    is a second candidate, and ``polish`` runs a joint search over h and the
    multipliers from the first one. The best certified candidate is returned.
    """
    d, m = prob.d, prob.m
    h0 = plugin_h(prob) if h0 is None else as_sym(h0, d, "h0")
    rep = _outer_h(prob, cfg, h0)
    h1 = sym(rep.x.reshape(d, d))
    best = build_discrete_estimate(h1, prob, (None, None), rep.stalled, rep.history)
    if not prob.psd_cut:
        return best
    zero = np.zeros((m, m))
    cands = [build_discrete_estimate(h1, prob, (zero, zero), rep.stalled, rep.history)]
    cands.append(build_discrete_estimate(np.zeros((d, d)), prob, psd_multipliers(prob)))
    if polish:
        rep2, h2, mult = _outer_joint(prob, cfg, h1, zero, zero)
        cands.append(build_discrete_estimate(h2, prob, mult, rep2.stalled, rep.history + rep2.history))
    return min(cands, key=lambda e: e.rho)


def _psd_below(U, S0, iters):
    # Dykstra between the PSD cone and {S <= U}; returns a PSD point
    S, P, R = S0.copy(), np.zeros_like(S0), np.zeros_like(S0)
    for _ in range(iters):
        Y = project_psd(S + P)
        P = S + P - Y
        S = np.minimum(Y + R, U)
        R = Y + R - S
    return project_psd(S)


def psd_multipliers(prob, n_bisect=30, iters=300):
    """PSD multipliers (S_+, S_-) for the h = 0 bounds.

    For each sign, min_{S >= 0} max_ij (S - sign Qbar)_ij is the PSD-cut value
    of max_x -sign Tr(Qbar x). It is found by bisection on the level t, each
    level tested by alternating projections; every returned S is exactly PSD,
    so the bound it certifies is valid whatever the search accuracy.
    """
    out = []
    for sign in (+1, -1):
        C = -sign * prob.Qbar
        lo, hi = float(np.max(np.diag(C))), float(np.max(C))
        best_S, best = np.zeros_like(C), hi
        for _ in range(n_bisect):
            if hi - lo <= 1e-12 * max(1.0, abs(hi)):
                break
            t = 0.5 * (lo + hi)
            S = _psd_below(t - C, best_S, iters)
            b = float(np.max(C + S))
            if b < best:
                best, best_S = b, S
            if b <= t + 1e-7 * max(1.0, abs(t)):
                hi = t
            else:
                lo = t
        out.append(best_S)
    return tuple(out)


def apply_discrete(est, samples, problem_digest=None):
    if problem_digest is not None and est.problem_digest and problem_digest != est.problem_digest:
        raise DomainError("estimate was built for a different problem")
    s = np.asarray(samples).reshape(-1)
    if s.size != est.K:
        raise DimensionError(f"expected {est.K} samples, got {s.size}")
    omega = lifted_obs(s, est.h.shape[0])
    return float(np.vdot(est.h, omega) + est.kappa)


def independence_defect(I, J, m):
    """(Q, q) with u^T Q u + 2 q^T u equal to the independence defect
    sum_{I x J} u - (sum_{I x all} u)(sum_{all x J} u); cells are row-major."""
    I = np.asarray(sorted(set(I)), dtype=int)
    J = np.asarray(sorted(set(J)), dtype=int)
    if (I.size and (I.min() < 0 or I.max() >= m)) or (J.size and (J.min() < 0 or J.max() >= m)):
        raise DomainError("index sets must lie in range(m)")
    rows = np.zeros(m)
    rows[I] = 1.0
    cols = np.zeros(m)
    cols[J] = 1.0
    a = np.kron(rows, np.ones(m))
    b = np.kron(np.ones(m), cols)
    c = np.kron(rows, cols)
    Q = -0.5 * (np.outer(a, b) + np.outer(b, a))
    return Q, 0.5 * c


def gen_sensing(m, theta_mix, seed):
    """A = theta I + (1 - theta) D on d = m^2 cells, D with normalized uniform
    columns. Returns (A, cond(A))."""
    if not 0.0 <= theta_mix <= 1.0:
        raise DomainError("theta_mix must lie in [0, 1]")
    d = m * m
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x4449])))
    D = rng.uniform(0.0, 1.0, size=(d, d))
    D /= D.sum(axis=0)
    A = theta_mix * np.eye(d) + (1.0 - theta_mix) * D
    A /= A.sum(axis=0)
    return A, float(np.linalg.cond(A))


def independence_problem(m=8, I=(0, 1, 2), J=(0, 1, 2), theta_mix=0.25, K=2000, epsilon=0.01, seed=0, psd_cut=True):
    A, _ = gen_sensing(m, theta_mix, seed)
    Q, q = independence_defect(I, J, m)
    return DiscreteQuadProblem(A, qbar(Q, q), epsilon, K, psd_cut)
