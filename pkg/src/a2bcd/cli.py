"""Command-line front end: ``a2bcd {solve,dryrun,lowerbound,ode}``.

Options can come from flags or from a flat ``key = value`` file given with
``--config``; flags win. Exit codes: 0 success, 1 numeric failure,
2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .core import InvalidParameterError
from .ode import StepSizeError
from .runtime import DegenerateTransformError

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    """Bad configuration or unreadable input; maps to exit code 2."""


class NumericFailure(Exception):
    """A run produced non-finite values or failed a numeric check; exit code 1."""


# ---------------------------------------------------------------------------
# config


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                       interpolation=None, delimiters=("=",))
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        # the injected section header shifts line numbers by one
        raise ConfigError(f"{path}:{lineno - 1}: expected 'key = value', got {line}") \
            from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{path}:{exc.lineno - 1}: duplicate key {exc.option!r}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc.message.strip()}") from exc
    return {k.replace("-", "_"): v for k, v in parser["run"].items()}


def _floats(text) -> list:
    if isinstance(text, (int, float)):
        return [float(text)]
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a number list, got {text!r}") from exc


def _merge(args, defaults: dict, casts: dict):
    """Fill unset flags from ``--config`` then from ``defaults``."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    known = set(defaults) | set(vars(args))
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            raw = cfg.get(key, default)
            if raw is not None and key in casts and isinstance(raw, str):
                try:
                    raw = casts[key](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from exc
            setattr(args, key, raw)
    return args


PROBLEM_DEFAULTS = dict(problem="synth", n_blocks=50, block_size=2, kappa=1e3, problem_seed=0,
                        data=None, n_features=None, lam="1e-3", d=200, n=500, density=0.1)
PROBLEM_CASTS = dict(n_blocks=int, block_size=int, kappa=float, problem_seed=int,
                     n_features=int, d=int, n=int, density=float)


def build_problem(args, lam: float):
    from .problems import (load_libsvm, random_ridge_data, ridge_dual_oracle,
                           synth_quadratic, LibsvmParseError)

    if args.problem == "synth":
        return synth_quadratic(args.n_blocks, args.block_size, args.kappa, seed=args.problem_seed)
    if args.problem == "ridge":
        if args.data:
            path = Path(args.data)
            if not path.is_file():
                raise ConfigError(f"dataset not found: {path}")
            try:
                ds = load_libsvm(path, n_features=args.n_features)
            except LibsvmParseError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
            except OSError as exc:
                raise ConfigError(f"cannot read dataset {path}: {exc.strerror}") from exc
            A, labels = ds.X, ds.labels
        else:
            A, labels = random_ridge_data(args.d, args.n, args.density, seed=args.problem_seed)
        return ridge_dual_oracle(A, labels, lam, block_size=args.block_size)
    raise ConfigError(f"unknown problem {args.problem!r} (expected synth or ridge)")


# ---------------------------------------------------------------------------
# artifacts


PLOT_SCRIPT = '''"""Sub-optimality vs time (and vs iteration) from the trace CSVs in this tree.

Generated by a2bcd; needs matplotlib. Usage: python plot_traces.py [out.png]
"""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

root = Path(__file__).resolve().parent
traces = sorted(root.rglob("trace.csv"))
panels = sorted({p.parent.parent if p.parent.parent != root.parent else p.parent for p in traces})
fig, axes = plt.subplots(2, max(1, len(panels)), figsize=(4.5 * max(1, len(panels)), 7),
                         squeeze=False)
for col, panel in enumerate(panels):
    for path in traces:
        if panel not in path.parents:
            continue
        rows = list(csv.DictReader(open(path)))
        k = [float(r["k"]) for r in rows]
        t = [float(r["seconds"]) for r in rows]
        gap = [max(float(r["f_y_gap"]), 1e-300) for r in rows]
        label = str(path.parent.relative_to(panel)) if path.parent != panel else path.parent.name
        axes[0][col].semilogy(t, gap, label=label)
        axes[1][col].semilogy(k, gap, label=label)
    axes[0][col].set_title(panel.name)
    axes[0][col].set_xlabel("seconds")
    axes[1][col].set_xlabel("iterations")
    for ax in (axes[0][col], axes[1][col]):
        ax.set_ylabel("f(y_k) - f*")
        ax.legend(fontsize=8)
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else str(root / "traces.png")
fig.savefig(out, dpi=120)
print(out)
'''


def write_summary(path, items: dict):
    with open(path, "w") as fh:
        for k, v in items.items():
            if isinstance(v, float):
                v = f"{v:.17g}"
            fh.write(f"{k}={v}\n")


def write_manifest(out: Path):
    """sha256 of every file under ``out`` (except the manifest itself)."""
    lines = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.txt":
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"{digest}  {p.relative_to(out).as_posix()}")
    (out / "manifest.txt").write_text("\n".join(lines) + ("\n" if lines else ""))


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


# ---------------------------------------------------------------------------
# solve


SOLVE_DEFAULTS = dict(PROBLEM_DEFAULTS, solver="nu_acdm", workers=1, tau=None, psi=None,
                      variant="main", seed=0, budget=20000, seconds=None, checkpoint_every=None,
                      delay_mode=None, sampling="uniform", target=None, out="a2bcd_out",
                      timing="wall", restart_period=None, dry_run_seconds=0.5)
SOLVE_CASTS = dict(PROBLEM_CASTS, workers=int, psi=float, seed=int, budget=int, seconds=float,
                   checkpoint_every=int, target=float, restart_period=int,
                   dry_run_seconds=float)


def _schedule_for(args, oracle):
    from .schedule import make_schedule
    from .runtime import dry_run_tau

    if args.tau is not None and args.psi is not None:
        raise ConfigError("set at most one of tau and psi")
    tau = 0
    if args.tau is not None:
        if str(args.tau) == "auto":
            tau = dry_run_tau(oracle, args.workers, args.dry_run_seconds, seed=args.seed).tau_hat
        else:
            try:
                tau = int(args.tau)
            except ValueError as exc:
                raise ConfigError(f"tau must be an integer or 'auto', got {args.tau!r}") from exc
            if tau < 0:
                raise ConfigError("tau must be >= 0")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sched = make_schedule(oracle.params, tau, psi=args.psi, variant=args.variant)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return sched


def _solve_one(args, oracle, out: Path) -> dict:
    from .solvers import DelaySchedule, nu_acdm_run, rbcd_run, run_simulated
    from .runtime import run_parallel

    if args.budget is not None and args.budget < 1:
        raise ConfigError("budget must be positive")
    if args.workers < 1:
        raise ConfigError("workers must be >= 1")
    every = args.checkpoint_every
    info = {}
    if args.solver == "nu_acdm":
        trace = nu_acdm_run(oracle, args.budget, seed=args.seed, checkpoint_every=every)
    elif args.solver == "rbcd":
        trace = rbcd_run(oracle, args.budget, seed=args.seed, checkpoint_every=every,
                         sampling=args.sampling)
    elif args.solver == "a2bcd":
        sched = _schedule_for(args, oracle)
        info.update(psi=sched.psi, alpha=sched.alpha, beta=sched.beta, h=sched.h, tau=sched.tau,
                    variant=sched.variant, theory_valid=sched.theory_valid)
        if args.workers == 1:
            mode = args.delay_mode or ("constant" if sched.tau else "zero")
            if mode == "zero":
                delays = DelaySchedule.zero()
            elif mode == "constant":
                delays = DelaySchedule.constant(sched.tau)
            elif mode == "uniform":
                delays = DelaySchedule.uniform(sched.tau, seed=args.seed)
            else:
                raise ConfigError(f"unknown delay mode {mode!r}")
            info["delay_mode"] = mode
            trace = run_simulated(oracle, sched, delays, budget=args.budget, seed=args.seed,
                                  checkpoint_every=every)
        else:
            res = run_parallel(oracle, sched, workers=args.workers, budget=args.budget,
                               duration=args.seconds, seed=args.seed,
                               restart_period=args.restart_period, target_gap=args.target)
            trace = res.trace
            res.staleness.to_csv(out / "staleness.csv")
            info.update(tau_hat=res.tau_hat, restarts=res.restarts,
                        pair_mismatches=res.pair_mismatches, read_retries=res.read_retries,
                        backend=res.backend)
    else:
        raise ConfigError(f"unknown solver {args.solver!r}")
    if args.timing == "none":
        for cp in trace.checkpoints:
            cp.seconds = 0.0
    elif args.timing != "wall":
        raise ConfigError("timing must be 'wall' or 'none'")
    trace.to_csv(out / "trace.csv")
    last = trace.checkpoints[-1]
    p = oracle.params
    summary = dict(solver=args.solver, problem=args.problem, seed=args.seed, workers=args.workers,
                   n_blocks=p.n_blocks, dim=oracle.dim, sigma=p.sigma, L=p.L, S=p.S,
                   kappa=p.kappa, iterations=last.k, final_f_x_gap=last.f_x_gap,
                   final_f_y_gap=last.f_y_gap,
                   f_star_source=trace.config.get("f_star_source", "analytic"))
    if args.timing == "wall":
        summary["seconds"] = last.seconds
    summary.update(info)
    if not (math.isfinite(last.f_x_gap) and math.isfinite(last.f_y_gap)):
        write_summary(out / "summary.txt", summary)
        raise NumericFailure(f"non-finite sub-optimality after {last.k} iterations")
    write_summary(out / "summary.txt", summary)
    return summary


def cmd_solve(args) -> int:
    args = _merge(args, SOLVE_DEFAULTS, SOLVE_CASTS)
    out = _outdir(args.out)
    lams = _floats(args.lam)
    solvers = [s.strip() for s in str(args.solver).split(",") if s.strip()]
    if not lams or not solvers:
        raise ConfigError("need at least one lam value and one solver")
    sweep = len(lams) > 1 or len(solvers) > 1
    base = vars(args).copy()
    for lam in lams:
        oracle = build_problem(args, lam)
        for solver in solvers:
            run = argparse.Namespace(**dict(base, solver=solver))
            sub = out
            if sweep:
                sub = _outdir(out / (f"lam={lam:g}" if args.problem == "ridge" else "") / solver)
            summ = _solve_one(run, oracle, sub)
            tag = f"lam={lam:g} " if args.problem == "ridge" else ""
            print(f"{tag}{solver}: iterations={summ['iterations']} "
                  f"f_y_gap={summ['final_f_y_gap']:.3e}")
    (out / "plot_traces.py").write_text(PLOT_SCRIPT)
    write_manifest(out)
    print(f"artifacts: {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dryrun


DRY_DEFAULTS = dict(PROBLEM_DEFAULTS, problem="ridge", workers=1, duration=1.0, seed=0,
                    out="a2bcd_out")
DRY_CASTS = dict(PROBLEM_CASTS, workers=int, duration=float, seed=int)


def cmd_dryrun(args) -> int:
    from .runtime import dry_run_tau

    args = _merge(args, DRY_DEFAULTS, DRY_CASTS)
    if args.workers < 1:
        raise ConfigError("workers must be >= 1")
    if not args.duration > 0:
        raise ConfigError("duration must be positive")
    oracle = build_problem(args, _floats(args.lam)[0])
    res = dry_run_tau(oracle, args.workers, args.duration, seed=args.seed)
    out = _outdir(args.out)
    hist = out / "staleness.csv"
    res.staleness.to_csv(hist)
    write_summary(out / "summary.txt", dict(workers=args.workers, duration=args.duration,
                                           updates=res.iterations, tau_hat=res.tau_hat,
                                           backend=res.backend))
    write_manifest(out)
    print(f"tau_hat={res.tau_hat}")
    print(f"staleness histogram: {hist}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# lowerbound


LB_DEFAULTS = dict(kappa="9,9", k=10, b=None, trials=500, solvers="rbcd,nu_acdm", seed=0,
                   out=None, sigma=1.0)
LB_CASTS = dict(k=int, b=int, trials=int, seed=int, sigma=float)


def cmd_lowerbound(args) -> int:
    from .diagnostics import lower_bound_trials
    from .problems import lower_bound_ratio, worst_case_oracle

    args = _merge(args, LB_DEFAULTS, LB_CASTS)
    kappas = _floats(args.kappa)
    if len(kappas) < 2:
        raise ConfigError("need at least two kappa values (one per block)")
    if args.k < 0 or args.trials < 2:
        raise ConfigError("need k >= 0 and trials >= 2")
    b = args.b if args.b is not None else max(2, 2 * args.k)
    prob = worst_case_oracle(args.sigma, [args.sigma * kv for kv in kappas], b)
    n = len(kappas)
    rows = []
    violated = False
    for solver in [s.strip() for s in args.solvers.split(",") if s.strip()]:
        if solver == "rbcd":
            p = np.full(n, 1.0 / n)
        elif solver == "nu_acdm":
            sk = np.sqrt(kappas)
            p = sk / sk.sum()
        else:
            raise ConfigError(f"unknown solver {solver!r}")
        bound = lower_bound_ratio(kappas, p, args.k, b)
        start = int(np.argmax(bound.per_block))
        res = lower_bound_trials(prob, solver, args.k, args.trials, seed=args.seed,
                                 start_block=start)
        se = res.stderr
        flag = res.mean < bound.per_block[start] - 2 * se
        violated |= flag
        rows.append((solver, res.mean, se, float(bound.per_block[start]), bound.closed_form,
                     "VIOLATION" if flag else "ok"))
    header = "solver,empirical,stderr,bound,closed_form,status"
    lines = [header] + [f"{r[0]},{r[1]:.6g},{r[2]:.3g},{r[3]:.6g},{r[4]:.6g},{r[5]}" for r in rows]
    print(f"kappa={','.join(f'{kv:g}' for kv in kappas)} k={args.k} b={b} trials={args.trials}")
    print("\n".join(lines))
    if args.out:
        out = _outdir(args.out)
        (out / "lowerbound.csv").write_text("\n".join(lines) + "\n")
        write_manifest(out)
    return EXIT_NUMERIC if violated else EXIT_OK


# ---------------------------------------------------------------------------
# ode


ODE_DEFAULTS = dict(n=8, kappa=16.0, dim=8, tau=None, tau_fraction=None, delay_mode="constant",
                    step=None, T=100.0, seed=0, out="a2bcd_out")
ODE_CASTS = dict(n=int, kappa=float, dim=int, tau=float, tau_fraction=float, step=float,
                 T=float, seed=int)


def cmd_ode(args) -> int:
    from . import ode

    args = _merge(args, ODE_DEFAULTS, ODE_CASTS)
    if args.tau is not None and args.tau_fraction is not None:
        raise ConfigError("set at most one of tau and tau_fraction")
    if args.kappa < 1 or args.dim < 1 or args.n < 1:
        raise ConfigError("need kappa >= 1, dim >= 1, n >= 1")
    thr = ode.tau_threshold(args.n, args.kappa)
    tau = args.tau if args.tau is not None else (args.tau_fraction or 0.0) * thr
    rng = np.random.default_rng(args.seed)
    Q, _ = np.linalg.qr(rng.standard_normal((args.dim, args.dim)))
    eig = np.geomspace(1.0, args.kappa, args.dim)
    H = (Q * eig) @ Q.T
    y0 = rng.standard_normal(args.dim)
    eta = args.n * math.sqrt(args.kappa)
    step = args.step or (tau / 10 if tau > 0 else min(0.05, eta / 50))
    cfg = ode.OdeConfig(eta=eta, step=step, T=args.T, tau=tau, delay_mode=args.delay_mode,
                        seed=args.seed)

    def f(y):
        return 0.5 * float(y @ H @ y)

    def g(y):
        return H @ y

    if tau > 0:
        traj = ode.integrate_delayed(g, y0, None, cfg, value=f)
        c0, r = ode.theorem_constants(args.n, args.kappa, tau)
        if r * tau > 0.5:
            raise ConfigError(f"r*tau = {r * tau:.3g} exceeds 1/2")
        E, A, comp = ode.composite_energy(traj, c0, r, tau)
    else:
        traj = ode.integrate_sync(g, y0, None, cfg, value=f, check_energy=False)
        E = traj.energy()
        A = np.zeros_like(E)
        comp = E
    out = _outdir(args.out)
    ode.write_trajectory_csv(out / "trajectory.csv", traj, A)
    e_ok, _ = ode.is_nonincreasing(E, 1e-9)
    c_ok, _ = ode.is_nonincreasing(comp, 1e-8)
    write_summary(out / "summary.txt", dict(n=args.n, kappa=args.kappa, eta=eta, tau=tau,
                                           tau_threshold=thr, step=step, T=args.T,
                                           E_monotone=e_ok, composite_monotone=c_ok))
    write_manifest(out)
    print(f"tau={tau:.6g} threshold={thr:.6g}")
    print(f"E monotone: {'yes' if e_ok else 'no'}")
    print(f"composite monotone: {'yes' if c_ok else 'no'}")
    if not np.all(np.isfinite(comp)):
        raise NumericFailure("non-finite energy")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _problem_flags(p):
    p.add_argument("--problem", choices=["synth", "ridge"])
    p.add_argument("--n-blocks", dest="n_blocks", type=int)
    p.add_argument("--block-size", dest="block_size", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--problem-seed", dest="problem_seed", type=int)
    p.add_argument("--data", help="LIBSVM file for --problem ridge")
    p.add_argument("--n-features", dest="n_features", type=int)
    p.add_argument("--lam", help="ridge regularization; a comma list sweeps")
    p.add_argument("--d", type=int, help="synthetic ridge features")
    p.add_argument("--n", type=int, help="synthetic ridge samples")
    p.add_argument("--density", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="a2bcd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run a solver and write a trace")
    s.add_argument("--config")
    _problem_flags(s)
    s.add_argument("--solver", help="a2bcd, nu_acdm or rbcd (comma list allowed)")
    s.add_argument("--workers", type=int)
    s.add_argument("--tau", help="delay bound for the schedule (integer or 'auto')")
    s.add_argument("--psi", type=float)
    s.add_argument("--variant", choices=["main", "extension"])
    s.add_argument("--seed", type=int)
    s.add_argument("--budget", type=int, help="iterations")
    s.add_argument("--seconds", type=float, help="wall-clock cap for parallel runs")
    s.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    s.add_argument("--delay-mode", dest="delay_mode", choices=["zero", "constant", "uniform"])
    s.add_argument("--sampling", choices=["uniform", "lipschitz"])
    s.add_argument("--target", type=float, help="stop parallel runs at this f-gap")
    s.add_argument("--restart-period", dest="restart_period", type=int)
    s.add_argument("--timing", choices=["wall", "none"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    d = sub.add_parser("dryrun", help="estimate staleness with zeroed updates")
    d.add_argument("--config")
    _problem_flags(d)
    d.add_argument("--workers", type=int)
    d.add_argument("--duration", type=float)
    d.add_argument("--seed", type=int)
    d.add_argument("--out")
    d.set_defaults(func=cmd_dryrun)

    lb = sub.add_parser("lowerbound", help="Monte Carlo vs the worst-case bound")
    lb.add_argument("--config")
    lb.add_argument("--kappa", help="comma list, one per block")
    lb.add_argument("--k", type=int)
    lb.add_argument("--b", type=int)
    lb.add_argument("--trials", type=int)
    lb.add_argument("--solvers")
    lb.add_argument("--sigma", type=float)
    lb.add_argument("--seed", type=int)
    lb.add_argument("--out")
    lb.set_defaults(func=cmd_lowerbound)

    o = sub.add_parser("ode", help="integrate the continuous-time model")
    o.add_argument("--config")
    o.add_argument("--n", type=int)
    o.add_argument("--kappa", type=float)
    o.add_argument("--dim", type=int)
    o.add_argument("--tau", type=float)
    o.add_argument("--tau-fraction", dest="tau_fraction", type=float)
    o.add_argument("--delay-mode", dest="delay_mode", choices=["constant", "piecewise-random"])
    o.add_argument("--step", type=float)
    o.add_argument("--T", type=float)
    o.add_argument("--seed", type=int)
    o.add_argument("--out")
    o.set_defaults(func=cmd_ode)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, StepSizeError, DegenerateTransformError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
