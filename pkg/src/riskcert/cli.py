"""Command-line experiment runner.

Each subcommand writes CSV (first line a '#' comment with a timestamp) to
--out or stdout and prints a one-line summary to stderr. Exit codes: 0 ok,
2 when a solver stalled but the reported bounds are still valid, 1 on
errors, 64 on usage errors.
"""

import argparse
import concurrent.futures
import datetime
import json
import math
import sys

import numpy as np

from .errors import ConvergenceError, DimensionError, DomainError
from .saddle_solver import SolverConfig

__all__ = ["main", "run", "emit_boxplot_stats", "build_parser", "UsageError"]

EXIT_OK, EXIT_ERROR, EXIT_STALLED, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def emit_boxplot_stats(values):
    """{min, q1, median, q3, max, n} with linear-interpolation quantiles."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise DimensionError("need at least one value")
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return {"min": float(q[0]), "q1": float(q[1]), "median": float(q[2]), "q3": float(q[3]),
            "max": float(q[4]), "n": int(v.size)}


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _row(*vals):
    return ",".join(_cell(v) for v in vals)


# commands -----------------------------------------------------------------------

def _linform_one(args):
    from .linear_subgaussian import gen_problem, solve_box

    i, a = args
    exact, env = gen_problem(a["d"], a["n"], a["alpha"], a["cond"], a["sigma"], seed=a["seed"] * 100003 + i,
                             epsilon=a["eps"], K=a["K"])
    e_env = solve_box(env)
    e_ex = solve_box(exact, f0=e_env.f)
    return i, e_ex.rho, e_env.rho, e_ex.stalled or e_env.stalled


def _map(fn, items, jobs):
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def cmd_linform(a):
    rows = _map(_linform_one, [(i, a) for i in range(a["problems"])], a["jobs"])
    lines = ["problem,rho_exact,rho_envelope,stalled"]
    lines += [_row(*r) for r in rows]
    stats = {"exact": emit_boxplot_stats([r[1] for r in rows]), "envelope": emit_boxplot_stats([r[2] for r in rows])}
    if a.get("stats"):
        with open(a["stats"], "w") as fh:
            json.dump(stats, fh, indent=2, sort_keys=True)
    summary = (f"linform: median rho exact {stats['exact']['median']:.6g}, "
               f"envelope {stats['envelope']['median']:.6g} over {len(rows)} problems")
    return lines, summary, any(r[3] for r in rows)


def cmd_energy(a):
    from .lower_bounds import energy_lower_bound, minimax_sandwich
    from .quad_gaussian import energy_opt

    res = energy_opt(a["m"], a["r"], a["R"], a["theta"], a["sigma"], a["eps"])
    cert = energy_lower_bound(a["m"], a["r"], a["R"], a["theta"], a["sigma"], a["eps"])
    ratio = minimax_sandwich(res.opt, cert) if cert.bound > 0 else math.inf
    lines = ["m,r,R,theta,sigma,eps,eta,kappa,opt,bound,ratio",
             _row(a["m"], a["r"], a["R"], a["theta"], a["sigma"], a["eps"], res.eta, res.kappa, res.opt, cert.bound, ratio)]
    return lines, f"energy: opt {res.opt:.6g}, bound {cert.bound:.6g}, ratio {ratio:.4g}", False


def _indirect_one(args):
    from .lower_bounds import indirect_lower_bound
    from .quad_gaussian import gen_indirect_problem, optimize_quad

    i, a = args
    prob, P, S = gen_indirect_problem(a["d"], a["m"], a["cond"], a["sigma"], seed=a["seed"] * 100003 + i,
                                      epsilon=a["eps"])
    est = optimize_quad(prob, SolverConfig(max_iter=a["iters"]), fix_h_zero=True)
    cert = indirect_lower_bound(P, S, a["sigma"], a["eps"], scale=1.0 / a["m"], seed=a["seed"] * 100003 + i)
    return i, est.rho, cert.bound, est.stalled


def cmd_indirect(a):
    rows = _map(_indirect_one, [(i, a) for i in range(a["problems"])], a["jobs"])
    lines = ["problem,rho,bound,ratio,stalled"]
    ratios = []
    for i, rho, b, st in rows:
        ratio = rho / b if b > 0 else math.inf
        ratios.append(ratio)
        lines.append(_row(i, rho, b, ratio, st))
    return lines, f"indirect: median ratio {float(np.median(ratios)):.4g} over {len(rows)} problems", \
        any(r[3] for r in rows)


def cmd_discrete(a):
    from .montecarlo import philox
    from .quad_discrete import gen_sensing, independence_problem, optimize_discrete

    I = tuple(range(a["I"]))
    prob = independence_problem(a["m"], I, I, a["theta_mix"], a["K"], a["eps"], a["seed"], psd_cut=not a["no_psd"])
    _, cond = gen_sensing(a["m"], a["theta_mix"], a["seed"])
    est = optimize_discrete(prob)
    rng = philox(a["seed"], 3, 0)
    u = rng.dirichlet(np.ones(prob.m))
    p = prob.A @ u
    p /= p.sum()
    N = rng.multinomial(prob.K, p, size=a["trials"]).astype(float)
    vals = (np.einsum("ni,ij,nj->n", N, est.h, N) - N @ np.diag(est.h)) / (prob.K * (prob.K - 1)) + est.kappa
    err = np.abs(vals - prob.F(u))
    q = np.percentile(err, [50, 90, 99])
    lines = ["K,theta_mix,cond,rho_star,err_q50,err_q90,err_q99",
             _row(prob.K, a["theta_mix"], cond, est.rho, q[0], q[1], q[2])]
    return lines, f"discrete: rho* {est.rho:.6g} at K={prob.K}, cond(A) {cond:.4g}", est.stalled


def cmd_lowerbound(a):
    from .lower_bounds import energy_lower_bound, indirect_lower_bound
    from .quad_gaussian import gen_indirect_problem

    if a["kind"] == "energy":
        cert = energy_lower_bound(a["m"], a["r"], a["R"], a["theta"], a["sigma"], a["eps"])
    else:
        _, P, S = gen_indirect_problem(a["d"], a["m"], a["cond"], a["sigma"], seed=a["seed"], epsilon=a["eps"])
        cert = indirect_lower_bound(P, S, a["sigma"], a["eps"], scale=1.0 / a["m"], seed=a["seed"])
    lines = ["kind,bound,overlap,epsilon", _row(cert.kind, cert.bound, cert.overlap, cert.epsilon)]
    if a.get("json"):
        with open(a["json"], "w") as fh:
            fh.write(cert.to_json())
    return lines, f"lowerbound: {cert.kind} bound {cert.bound:.6g}", False


def cmd_coverage(a):
    from . import montecarlo as mc

    kind = a["kind"]
    n = a["trials"]
    stalled = False
    if kind == "energy":
        from .quad_gaussian import energy_opt

        res = energy_opt(a["m"], a["r"], a["R"], a["theta"], a["sigma"], a["eps"])
        rep = mc.coverage_energy(res, a["m"], a["r"], a["R"], a["theta"], a["sigma"], a["eps"], n, a["seed"])
    elif kind == "indirect":
        from .quad_gaussian import gen_indirect_problem, optimize_quad

        prob, P, S = gen_indirect_problem(seed=a["seed"], epsilon=a["eps"])
        est = optimize_quad(prob, SolverConfig(max_iter=a["iters"]), fix_h_zero=True)
        stalled = est.stalled
        rep = mc.coverage_quad(est, prob, indirect_signals(prob, S, a["seed"]), n, a["seed"])
    elif kind == "discrete":
        from .quad_discrete import independence_problem, optimize_discrete

        prob = independence_problem(K=a["K"], epsilon=a["eps"], seed=a["seed"])
        est = optimize_discrete(prob)
        stalled = est.stalled
        rep = mc.coverage_discrete(est, prob, discrete_signals(prob.m, a["seed"]), n, a["seed"])
    else:
        raise UsageError(f"unknown coverage kind {kind!r}")
    lines = rep.to_csv().rstrip("\n").split("\n")
    verdict = "pass" if rep.passed else "FAIL"
    summary = f"coverage[{kind}]: {verdict}, max frequency {rep.max_frequency:.4g} vs threshold {rep.threshold:.4g}"
    return lines, summary, stalled, rep.passed


def indirect_signals(prob, S, seed, n_random=4):
    """Boundary points of {|S u| <= 1} (random directions and the directions
    least visible through A) with noise at both ends of its box."""
    from .montecarlo import philox

    rng = philox(seed, 1, 7)
    m, d = prob.m, prob.d
    Sinv = np.linalg.inv(S)
    dirs = [rng.standard_normal(m) for _ in range(n_random)]
    P = prob.A[:, :m]
    _, _, Vt = np.linalg.svd(P @ Sinv)
    dirs.append(Vt[-1])
    dirs.append(Vt[0])
    out = []
    hi = prob.V.upper
    for k, w in enumerate(dirs):
        u = Sinv @ w if k >= n_random else w
        u = u / np.linalg.norm(S @ u)
        out.append((u, hi.copy()))
        out.append((u, np.zeros(d)))
    return out


def discrete_signals(m, seed, n_random=4):
    """Distributions on the m cells: random ones plus the extremes of the
    independence defect (for the default index sets)."""
    from .montecarlo import philox

    rng = philox(seed, 1, 11)
    sig = [rng.dirichlet(np.ones(m)) for _ in range(n_random)]
    k = int(round(math.sqrt(m)))
    hi = np.zeros(m)
    hi[0] = hi[(k - 1) * k + (k - 1)] = 0.5
    lo = np.zeros(m)
    lo[0 * k + (k - 1)] = lo[(k - 1) * k + 0] = 0.5
    sig += [hi, lo, np.full(m, 1.0 / m)]
    return sig


# parsing --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="riskcert", description="Certified risk bounds for affine and quadratic estimates.")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="CSV output path (default stdout)")
    common.add_argument("--config", default=None, help="key=value file; flags take precedence")
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--eps", type=float, default=0.01)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("linform", parents=[common])
    s.add_argument("--d", type=int, default=32)
    s.add_argument("--n", type=int, default=48)
    s.add_argument("--alpha", type=float, default=2.0)
    s.add_argument("--cond", type=float, default=2.0)
    s.add_argument("--sigma", type=float, default=0.01)
    s.add_argument("--problems", type=int, default=100)
    s.add_argument("--K", type=int, default=1)
    s.add_argument("--stats", default=None, help="boxplot statistics JSON path")

    def energy_args(s):
        s.add_argument("--m", type=int, default=512)
        s.add_argument("--r", type=float, default=64.0)
        s.add_argument("--R", type=float, default=128.0)
        s.add_argument("--theta", type=float, default=1.0)
        s.add_argument("--sigma", type=float, default=1.0)

    energy_args(sub.add_parser("energy", parents=[common]))

    s = sub.add_parser("indirect", parents=[common])
    s.add_argument("--d", type=int, default=24)
    s.add_argument("--m", type=int, default=64)
    s.add_argument("--cond", type=float, default=10.0)
    s.add_argument("--sigma", type=float, default=0.025)
    s.add_argument("--problems", type=int, default=20)
    s.add_argument("--iters", type=int, default=300)

    s = sub.add_parser("discrete", parents=[common])
    s.add_argument("--m", type=int, default=8, help="side of the discrete square (d = m^2 cells)")
    s.add_argument("--I", type=int, default=3, help="index sets are the first I rows and columns")
    s.add_argument("--K", type=int, default=2000)
    s.add_argument("--theta-mix", dest="theta_mix", type=float, default=0.25)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--no-psd", dest="no_psd", action="store_true")

    s = sub.add_parser("lowerbound", parents=[common])
    s.add_argument("--kind", choices=["energy", "indirect"], default="energy")
    energy_args(s)
    s.add_argument("--d", type=int, default=24)
    s.add_argument("--cond", type=float, default=10.0)
    s.add_argument("--json", default=None, help="certificate JSON path")

    s = sub.add_parser("coverage", parents=[common])
    s.add_argument("--kind", choices=["energy", "indirect", "discrete"], default="energy")
    energy_args(s)
    s.add_argument("--K", type=int, default=2000)
    s.add_argument("--trials", type=int, default=10_000)
    s.add_argument("--iters", type=int, default=300)
    return p


def _read_config(path):
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = (t.strip() for t in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _parse(argv):
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.config:
        cfg = _read_config(ns.config)
        sub = parser._subparsers._group_actions[0].choices[ns.command]
        actions = {a.dest: a for a in sub._actions}
        unknown = sorted(set(cfg) - set(actions) - {"config"})
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        given = {a.dest for a in sub._actions for opt in a.option_strings
                 if any(x == opt or x.startswith(opt + "=") for x in argv)}
        for k, v in cfg.items():
            if k in given or k == "config":
                continue
            act = actions[k]
            if isinstance(act, argparse._StoreTrueAction):
                val = v.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    val = act.type(v) if act.type else v
                except ValueError as exc:
                    raise UsageError(f"bad value for {k}: {v}") from exc
                if act.choices and val not in act.choices:
                    raise UsageError(f"bad value for {k}: {v}")
            setattr(ns, k, val)
    return vars(ns)


COMMANDS = {
    "linform": cmd_linform,
    "energy": cmd_energy,
    "indirect": cmd_indirect,
    "discrete": cmd_discrete,
    "lowerbound": cmd_lowerbound,
    "coverage": cmd_coverage,
}


def run(args, stdout=None, stderr=None):
    """Run one parsed command; returns the exit code."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    if args["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    out = COMMANDS[args["command"]](args)
    lines, summary, stalled = out[:3]
    failed = len(out) > 3 and not out[3]
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    text = f"# riskcert {args['command']} {stamp}\n" + "\n".join(lines) + "\n"
    if args.get("out"):
        with open(args["out"], "w") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    print(summary, file=stderr)
    if failed:
        return EXIT_ERROR
    return EXIT_STALLED if stalled else EXIT_OK


def main(argv=None, stdout=None, stderr=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    stderr = sys.stderr if stderr is None else stderr
    try:
        args = _parse(argv)
        return run(args, stdout, stderr)
    except UsageError as exc:
        print(str(exc), file=stderr)
        print("usage: riskcert {linform,energy,indirect,discrete,lowerbound,coverage} [options]", file=stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (DomainError, DimensionError, ConvergenceError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
