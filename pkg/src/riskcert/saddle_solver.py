"""First-order building blocks: 1-D convex minimization, concave maximization
over a convex set, and projected subgradient minimization."""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .convex_geometry import Box, Singleton
from .errors import ConvergenceError, DomainError

__all__ = [
    "SolverConfig",
    "SolveReport",
    "golden_min_1d",
    "log_golden_min",
    "inner_max",
    "outer_min",
]

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 2000
    tol_rel: float = 1e-8
    inner_max_iter: int = 500
    inner_tol: float = 1e-6
    fw_or_psg: str = "auto"
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1 or self.inner_max_iter < 1:
            raise DomainError("iteration budgets must be positive")
        if self.tol_rel <= 0 or self.inner_tol <= 0:
            raise DomainError("tolerances must be positive")
        if self.fw_or_psg not in ("auto", "fw", "psg"):
            raise DomainError("fw_or_psg must be 'auto', 'fw' or 'psg'")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class SolveReport:
    """Outcome of a solve.

    For maximization ``value`` is attained at ``x`` and ``value + gap_estimate``
    is a certified upper bound on the maximum (``gap_estimate`` may be inf
    when no certificate is available). For minimization ``value`` is the best
    objective seen.
    """

    value: float
    x: object
    iterations: int
    gap_estimate: float
    stalled: bool
    grad: object = None
    history: list = field(default_factory=list, repr=False)

    @property
    def upper(self):
        return self.value + self.gap_estimate


def _finite(v):
    if isinstance(v, float) and math.isnan(v):
        raise DomainError("objective returned NaN")
    return v


def golden_min_1d(fn, bracket, tol=1e-8, max_iter=500):
    """Golden-section search for a unimodal ``fn`` on ``bracket``.

    Returns ``(x, fn(x))`` with x within ``tol * (hi - lo)`` of the minimizer;
    the endpoints are candidates too, so monotone functions are handled.
    """
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise DomainError("bracket must satisfy lo < hi")
    width = tol * (hi - lo)
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = _finite(float(fn(c))), _finite(float(fn(d)))
    for _ in range(max_iter):
        if b - a <= width:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = _finite(float(fn(c)))
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = _finite(float(fn(d)))
    x, fx = (c, fc) if fc <= fd else (d, fd)
    return x, fx


def log_golden_min(fn, lo=1e-6, hi=1e6, rel_width=1e-8, expand=10.0, max_expand=40, floor=0.0):
    """Minimize a convex function of ``a > floor`` by golden search in ln(a - floor).

    The bracket [lo, hi] (for ``a - floor``) is widened by ``expand`` while the
    minimizer sits at one of its ends. Returns ``(a*, fn(a*))``.
    """
    lo_t, hi_t = math.log(lo), math.log(hi)
    step = math.log(expand)

    def g(t):
        return fn(floor + math.exp(t))

    for _ in range(max_expand):
        t, v = golden_min_1d(g, (lo_t, hi_t), tol=rel_width / max(1.0, hi_t - lo_t) * 10.0)
        edge = 1e-6 * (hi_t - lo_t)
        at_lo = t - lo_t <= edge
        at_hi = hi_t - t <= edge
        if not (at_lo or at_hi):
            return floor + math.exp(t), v
        if at_lo and at_hi:
            break
        if at_lo:
            if lo_t <= -700:
                return floor + math.exp(t), v
            # the end value may tie with the interior on flat functions
            if g(max(lo_t - step, -700.0)) >= v:
                return floor + math.exp(t), v
            lo_t = max(lo_t - step, -700.0)
            step *= 2.0
        else:
            if hi_t >= 700:
                return floor + math.exp(t), v
            if g(min(hi_t + step, 700.0)) >= v:
                return floor + math.exp(t), v
            hi_t = min(hi_t + step, 700.0)
            step *= 2.0
    raise ConvergenceError("no minimizer bracketed on the log scale")


def _fw_gap(S, g, x):
    val, s = S.support(g)
    return max(0.0, val - float(np.vdot(g, x))), s


def inner_max(oracle, S, cfg=SolverConfig(), x0=None, gap_set=None):
    """Maximize a concave function over the convex compact set ``S``.

    ``oracle(x)`` returns ``(value, supergradient)``. Frank-Wolfe (with exact
    line search along the segment) is used when ``S`` has an exact linear
    oracle; a quasi-Newton box solver polishes Box problems in ``auto`` mode;
    otherwise projected supergradient ascent runs, certified through the
    linear oracle of ``gap_set`` (a superset of ``S``) when one is given.
    """
    if isinstance(S, Singleton):
        v, g = oracle(S.point.copy())
        return SolveReport(float(v), S.point.copy(), 1, 0.0, False, grad=g)
    method = cfg.fw_or_psg
    if method == "auto":
        method = "fw" if S.exact_lmo else "psg"
    if method == "fw":
        if cfg.fw_or_psg == "auto" and isinstance(S, Box):
            return _box_quasi_newton(oracle, S, cfg, x0)
        return _frank_wolfe(oracle, S, cfg, x0)
    return _psg(oracle, S, cfg, x0, gap_set)


def _frank_wolfe(oracle, S, cfg, x0=None, start=None):
    x = S.linear_oracle(np.zeros(S.shape)) if x0 is None else np.array(x0, dtype=float)
    v, g = start if start is not None else oracle(x)
    best = (float(v), x, g)
    best_upper = math.inf
    it = 0
    for it in range(1, cfg.inner_max_iter + 1):
        gap, s = _fw_gap(S, g, x)
        best_upper = min(best_upper, v + gap)
        if best_upper - best[0] <= cfg.inner_tol * (1.0 + abs(best[0])):
            break
        d = s - x
        vs, gs = oracle(s)
        if float(np.vdot(gs, d)) >= 0.0:
            x, v, g = s, vs, gs
        else:
            lam, _ = golden_min_1d(lambda t: -oracle(x + t * d)[0], (0.0, 1.0), tol=1e-6)
            x = x + lam * d
            v, g = oracle(x)
        if v > best[0]:
            best = (float(v), x, g)
    gap_final = max(0.0, best_upper - best[0])
    stalled = gap_final > cfg.inner_tol * (1.0 + abs(best[0]))
    return SolveReport(best[0], best[1], it, gap_final, stalled, grad=best[2])


def _box_quasi_newton(oracle, S, cfg, x0=None):
    # a few Frank-Wolfe steps settle objectives that are (nearly) linear
    quick = _frank_wolfe(oracle, S, cfg.with_(inner_max_iter=4), x0)
    if not quick.stalled:
        return quick
    x_start = quick.x

    def neg(x):
        v, g = oracle(x)
        return -v, -np.asarray(g, dtype=float)

    res = minimize(
        neg, x_start, jac=True, method="L-BFGS-B",
        bounds=list(zip(S.lower, S.upper)),
        options={"maxiter": cfg.inner_max_iter, "ftol": 1e-15, "gtol": 1e-12},
    )
    x = np.clip(res.x, S.lower, S.upper)
    v, g = oracle(x)
    # finish with Frank-Wolfe steps, which also certify the gap
    rep = _frank_wolfe(oracle, S, cfg.with_(inner_max_iter=max(50, cfg.inner_max_iter // 10)), x0=x, start=(v, g))
    rep.iterations += int(res.nit)
    return rep


def _psg(oracle, S, cfg, x0=None, gap_set=None):
    x = S.project(np.zeros(S.shape) if x0 is None else np.asarray(x0, dtype=float))
    v, g = oracle(x)
    best = (float(v), x, g)
    best_upper = math.inf
    scale = None
    it = 0
    for it in range(1, cfg.inner_max_iter + 1):
        if gap_set is not None:
            gap, _ = _fw_gap(gap_set, g, x)
            best_upper = min(best_upper, v + gap)
            if best_upper - best[0] <= cfg.inner_tol * (1.0 + abs(best[0])):
                break
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            best_upper = min(best_upper, float(v))
            break
        if scale is None:
            scale = max(1.0, float(np.linalg.norm(x)))
        x = S.project(x + (scale / math.sqrt(it)) * g / gn)
        v, g = oracle(x)
        if v > best[0]:
            best = (float(v), x, g)
    gap_final = max(0.0, best_upper - best[0])
    stalled = not gap_final <= cfg.inner_tol * (1.0 + abs(best[0]))
    return SolveReport(best[0], best[1], it, gap_final, stalled, grad=best[2])


def outer_min(oracle, x0, cfg=SolverConfig(), project=None, lower=None, delta0=None):
    """Projected subgradient minimization with best-iterate tracking.

    ``oracle(x)`` returns ``(value, subgradient)``. Steps follow Polyak's rule
    towards an adaptive target ``best - delta`` (clipped at ``lower`` when a
    valid lower estimate is known); ``delta`` is halved whenever progress
    stalls, and the run stops once it falls below ``tol_rel``.
    """
    proj = project if project is not None else (lambda z: z)
    x = proj(np.array(x0, dtype=float))
    v, g = oracle(x)
    best_v, best_x = float(v), x
    delta = delta0 if delta0 is not None else max(0.5 * abs(best_v), 1e-3)
    history = [best_v]
    patience, since = 10, 0
    last_improve = 0
    it = 0
    early = False
    for it in range(1, cfg.max_iter + 1):
        gn2 = float(np.vdot(g, g))
        if gn2 == 0.0:
            early = True
            break
        target = best_v - delta
        if lower is not None:
            target = max(target, lower)
        step = max(v - target, 0.0) / gn2
        if step == 0.0:
            delta *= 0.5
            step = delta / gn2
        x = proj(x - step * g)
        v, g = oracle(x)
        if v < best_v - 1e-15 * max(1.0, abs(best_v)):
            if v <= best_v - 0.5 * delta:
                since = 0
            best_v, best_x = float(v), x
            last_improve = it
        else:
            since += 1
        if since >= patience:
            delta *= 0.5
            since = 0
            if lower is not None and best_v - lower <= cfg.tol_rel * max(1.0, abs(best_v)):
                early = True
                break
            if delta <= cfg.tol_rel * max(1.0, abs(best_v)):
                early = True
                break
        history.append(best_v)
    stalled = (not early) and last_improve < 0.75 * it
    return SolveReport(best_v, best_x, it, float("nan"), stalled, history=history)
