"""Command-line front end: ``qprecon generate | solve | verify | bench``.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose
keys mirror the long flag names (``grad-tol`` or ``grad_tol``); flags given
on the command line win. Output goes under ``--out``, which defaults to a
directory below ``$QPRECON_OUTPUT_DIR`` (``./qprecon-out`` when unset).

Exit codes for ``solve``: 0 when the gradient tolerance or an error target
is reached, 2 on the iteration or time limit, 3 on a solver failure (rank
drop or failed line search). Bad input files or arguments give 1, usage
errors the argparse default 2.
"""

import argparse
import csv
import math
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .instances import GeneratorSpec, InitSpec, generate, initialize
from .io import FormatError, default_output_dir, load_instance, read_config, save_instance
from .linalg import product_svd
from .problems import EntrySampling
from .solvers import METHODS, SolverConfig, Status, solve, write_trace_csv

EXIT_CODES = {
    Status.GRAD_TOL: 0,
    Status.TARGET: 0,
    Status.MAX_ITERS: 2,
    Status.MAX_TIME: 2,
    Status.RANK_DROP: 3,
    Status.LINESEARCH_FAILED: 3,
}
DEFAULT_STEPS = {"rgd": "rbb2", "rcg": "linemin", "egd": "armijo", "ecg": "linemin"}


class CliError(Exception):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def parse_sampling(text):
    """``bernoulli:P``, ``gaussian:D`` or ``full`` -> GeneratorSpec keywords."""
    kind, _, arg = text.partition(":")
    try:
        if kind == "bernoulli":
            return {"sampling": "bernoulli", "p": float(arg)}
        if kind in ("gaussian", "gaussian_sensing"):
            return {"sampling": "gaussian_sensing", "d": int(arg)}
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sampling argument {text!r}") from None
    if kind == "full" and not arg:
        return {"sampling": "full"}
    raise argparse.ArgumentTypeError(
        f"sampling must be bernoulli:P, gaussian:D or full, got {text!r}"
    )


def parse_init(text, seed=0):
    """``spectral``, ``random`` or ``unbalanced:LAMBDA`` (spectral, then rescaled)."""
    kind, _, arg = text.partition(":")
    if kind == "spectral" and not arg:
        return InitSpec("spectral", seed=seed)
    if kind == "random" and not arg:
        return InitSpec("random_gaussian", seed=seed)
    if kind == "unbalanced":
        try:
            return InitSpec("spectral", balance=float(arg), seed=seed)
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"init must be spectral, random or unbalanced:LAMBDA, got {text!r}")


def _check_init(text):
    parse_init(text)
    return text


def _check_step(text):
    try:
        SolverConfig.parse_step(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _int_list(text):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_config(p):
    p.add_argument("--config", type=Path, help="key = value file; command-line flags override it")
    p.add_argument("--out", type=Path, help="output directory")


def _add_solver_flags(p):
    p.add_argument("--method", choices=sorted(METHODS), default="rgd")
    p.add_argument("--step", type=_check_step, help="armijo, linemin, rbb1, rbb2, rbb1_nols, rbb2_nols or fixed:THETA")
    p.add_argument("--init", type=_check_init, default="spectral", help="spectral, random or unbalanced:LAMBDA")
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--grad-tol-mode", choices=["absolute", "relative"], default="absolute")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--max-time", type=float, default=math.inf, help="seconds")
    p.add_argument("--target-rmse", type=float, help="stop once the held-out RMSE is below this")
    p.add_argument("--target-rel-error", type=float, help="stop once |X - M*|/|M*| is below this")
    p.add_argument("--armijo-sigma", type=float, default=1e-4)
    p.add_argument("--armijo-beta", type=float, default=0.5)
    p.add_argument("--max-backtracks", type=int, default=50)


def _add_generator_flags(p):
    p.add_argument("--m", type=int, help="rows (required)")
    p.add_argument("--n", type=int, help="columns (required)")
    p.add_argument("--k", type=int, help="rank (required)")
    p.add_argument("--sampling", type=parse_sampling, default=parse_sampling("bernoulli:0.5"),
                   help="bernoulli:P, gaussian:D or full")
    p.add_argument("--model", choices=["gaussian_factors", "zero"], default="gaussian_factors")
    p.add_argument("--normalize-sensing", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--n-test", type=int, default=1000)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qprecon",
        description="Preconditioned gradient solvers for low-rank matrix recovery.",
    )
    sub = parser.add_subparsers(dest="command", metavar="{generate,solve,verify,bench}")
    sub.required = True

    g = sub.add_parser("generate", help="write a synthetic instance")
    _add_config(g)
    _add_generator_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate, required_flags=("m", "n", "k"))

    s = sub.add_parser("solve", help="run a solver on an instance and write its trace")
    _add_config(s)
    s.add_argument("--instance", type=Path, help="instance directory (required)")
    _add_solver_flags(s)
    s.set_defaults(func=cmd_solve, required_flags=("instance",))

    v = sub.add_parser("verify", help="audit the theory constants on an instance")
    _add_config(v)
    v.add_argument("--instance", type=Path, help="instance directory (required)")
    v.add_argument("--samples", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--delta", type=float, help="radius of the local region (default: delta_max / 2)")
    v.add_argument("--theta", type=float, help="stepsize at which to evaluate kappa (default: mid-window)")
    v.add_argument("--c1", type=float, help="row-norm cap constant for the completion check "
                   "(default sigma_max(M*) sqrt(2 c_star k))")
    v.add_argument("--c-star", type=float, help="numerical constant for the completion delta bound")
    v.add_argument("--c2", type=float, help="numerical constant for the completion delta bound")
    v.set_defaults(func=cmd_verify, required_flags=("instance",))

    b = sub.add_parser("bench", help="sweep methods x ranks x seeds and aggregate timings")
    _add_config(b)
    b.add_argument("--methods", default="rgd:rbb2,egd:armijo",
                   help="comma-separated METHOD[:STEP] entries")
    _add_generator_flags(b)
    b.add_argument("--ranks", type=_int_list, help="comma-separated ranks (default: --k)")
    b.add_argument("--seeds", type=_int_list, default=[0])
    b.add_argument("--iters", type=int, help="fixed iteration count (per-iteration timing mode)")
    b.add_argument("--grad-tol", type=float, default=1e-8)
    b.add_argument("--target-rel-error", type=float)
    b.add_argument("--max-iters", type=int, default=1000)
    b.add_argument("--max-time", type=float, default=math.inf)
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_bench, required_flags=("m", "n"))
    return parser


def _apply_config(parser, sub, argv):
    """Re-parse with config file values as defaults."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    try:
        values = read_config(args.config)
    except (OSError, FormatError) as exc:
        parser.exit(1, f"qprecon: error: {exc}\n")
    actions = {a.dest: a for a in sub[args.command]._actions}
    defaults = {}
    for key, raw in values.items():
        act = actions.get(key)
        if act is None or key in ("config", "help", "func", "required_flags"):
            sub[args.command].error(f"unknown config key {key!r} in {args.config}")
        conv = act.type or (lambda t: t)
        try:
            val = conv(raw)
        except (argparse.ArgumentTypeError, ValueError) as exc:
            sub[args.command].error(f"config key {key!r}: {exc}")
        if act.choices is not None and val not in act.choices:
            sub[args.command].error(f"config key {key!r}: invalid choice {val!r}")
        defaults[key] = val
    sub[args.command].set_defaults(**defaults)
    return parser.parse_args(argv)


def _subparsers(parser):
    for act in parser._actions:
        if isinstance(act, argparse._SubParsersAction):
            return act.choices
    raise RuntimeError("parser has no subcommands")


def _out_dir(args, name):
    out = args.out if args.out is not None else default_output_dir() / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _generator_spec(args, k=None, seed=None):
    return GeneratorSpec(
        m=args.m,
        n=args.n,
        k=args.k if k is None else k,
        seed=args.seed if seed is None else seed,
        model=args.model,
        normalize_sensing=args.normalize_sensing,
        n_test=args.n_test,
        **args.sampling,
    )


def cmd_generate(args):
    spec = _generator_spec(args)
    inst = generate(spec)
    out = _out_dir(args, "instance")
    save_instance(inst, out, spec)
    print(f"wrote instance {args.m}x{args.n} rank {args.k} to {out}")
    return 0


def _solver_config(args, **extra):
    step = args.step or DEFAULT_STEPS[args.method]
    return SolverConfig.parse_step(
        step,
        grad_tol=args.grad_tol,
        grad_tol_mode=args.grad_tol_mode,
        max_iters=args.max_iters,
        max_time=args.max_time,
        target_rmse=args.target_rmse,
        target_rel_error=args.target_rel_error,
        armijo_sigma=args.armijo_sigma,
        armijo_beta=args.armijo_beta,
        max_backtracks=args.max_backtracks,
        **extra,
    )


def cmd_solve(args):
    inst = load_instance(args.instance)
    cfg = _solver_config(args)
    x0 = initialize(inst, parse_init(args.init, args.init_seed))
    res = solve(args.method, inst, x0, cfg)
    out = _out_dir(args, "solve")
    write_trace_csv(out / "trace.csv", res.trace)
    last = res.trace[-1] if res.trace else None
    if last is None:
        print(f"status={res.status.value} iterations=0")
    else:
        print(
            f"status={res.status.value} iterations={last.iter} gradnorm={last.grad_norm:.6e} "
            f"recovery_error={last.recovery_error:.6e} seconds={last.wall_seconds:.3f}"
        )
    return EXIT_CODES[res.status]


def verify_report(inst, samples=200, seed=0, jobs=1, delta=None, theta=None, c1=None,
                  c_star=None, c2=None):
    """List of ``(name, value)`` rows audited on ``inst``."""
    k = inst.rank
    op = inst.op
    rows = [("m", inst.shape[0]), ("n", inst.shape[1]), ("k", k), ("operator", op.kind), ("gain", op.gain)]
    rpd_k = analysis.estimate_rpd(op, rank=k, samples=samples, seed=seed, n_jobs=jobs)
    rpd_2k = analysis.estimate_rpd(op, rank=2 * k, samples=samples, seed=seed, n_jobs=jobs)
    rows += [
        ("rpd_beta_hat_rank_k", rpd_k.beta_hat),
        ("rpd_beta_hat_rank_2k", rpd_2k.beta_hat),
        ("rpd_min_quotient_rank_2k", rpd_2k.min_quotient),
        ("rpd_max_quotient_rank_2k", rpd_2k.max_quotient),
    ]
    if inst.mstar is None:
        return rows
    amb = product_svd(inst.mstar.G, inst.mstar.H)
    rpd_star = analysis.estimate_rpd(op, amb, samples=samples, seed=seed, n_jobs=jobs)
    ray = analysis.hessian_rayleigh(inst, samples=samples, seed=seed, n_jobs=jobs)
    mu = analysis.incoherence(amb)
    rows += [
        ("rpd_beta_hat_at_mstar", rpd_star.beta_hat),
        ("hessian_rayleigh_min", ray.min),
        ("hessian_rayleigh_max", ray.max),
        ("hessian_lower_bound", 1.0 - rpd_2k.beta_hat),
        ("incoherence_mu", mu),
        ("sigma_min_star", float(amb.S[-1])),
        ("sigma_max_star", float(amb.S[0])),
    ]
    beta = rpd_star.beta_hat
    if beta < 1:
        x0 = initialize(inst)
        sig_xt = float(product_svd(x0.G, x0.H).S[-1])
        L = 1.0 + rpd_2k.beta_hat
        dmax = (1.0 - beta) * float(amb.S[-1]) / L
        tc = analysis.theory_constants(
            inst, beta, dmax / 2 if delta is None else delta, sig_xt, L=L,
            C_star=c_star, C2=c2, mu=mu, seed=seed,
        )
        lo, hi = tc.stepsize_window()
        th = theta if theta is not None else hi / 2
        rows += [
            ("L", tc.L),
            ("L_power_estimate", tc.L_power),
            ("delta", tc.delta),
            ("delta_max", tc.delta_max),
            ("region_violated", tc.region_violated),
            ("nu_tilde", tc.nu_tilde),
            ("c_delta_t", tc.c_delta_t),
            ("stepsize_window_upper", hi),
            ("theta", th),
            ("kappa_theta", tc.kappa(th)),
        ]
        if tc.mc_delta_bound is not None:
            rows.append(("mc_delta_bound", tc.mc_delta_bound))
    else:
        rows.append(("theory_constants", "skipped: sampled RPD constant >= 1"))
    if isinstance(op, EntrySampling):
        rep = analysis.mc_rpd_check(inst, samples=samples, C1=c1, mu=mu, seed=seed,
                                   C_star=2.0 if c_star is None else c_star)
        rows += [
            ("mc_rpd_samples", rep.samples),
            ("mc_rpd_attempts", rep.attempts),
            ("mc_rpd_pass_fraction", rep.pass_fraction),
            ("mc_rpd_min_quotient", rep.min_quotient),
            ("mc_rpd_max_quotient", rep.max_quotient),
        ]
    return rows


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def cmd_verify(args):
    inst = load_instance(args.instance)
    rows = verify_report(inst, samples=args.samples, seed=args.seed, jobs=args.jobs, delta=args.delta,
                         theta=args.theta, c1=args.c1, c_star=args.c_star, c2=args.c2)
    out = _out_dir(args, "verify")
    width = max(len(name) for name, _ in rows)
    (out / "report.txt").write_text("".join(f"{name:<{width}}  {_fmt(v)}\n" for name, v in rows))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        w.writerows((name, _fmt(v)) for name, v in rows)
    print((out / "report.txt").read_text(), end="")
    return 0


BENCH_HEADER = [
    "method", "step", "m", "n", "k", "sampling", "seed", "status", "iterations",
    "median_iter_seconds", "iters_to_tol", "final_gradnorm", "final_recovery_error",
    "total_seconds", "error",
]


def parse_methods(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        method, _, step = item.partition(":")
        if method not in METHODS:
            raise CliError(f"unknown method {method!r} in --methods")
        step = step or DEFAULT_STEPS[method]
        SolverConfig.parse_step(step)
        out.append((method, step))
    if not out:
        raise CliError("--methods is empty")
    return out


def run_cell(spec, method, step, cfg_kwargs):
    """One bench cell: generate, spectral init, solve; returns a row dict."""
    row = {"method": method, "step": step, "m": spec.m, "n": spec.n, "k": spec.k,
           "sampling": spec.sampling, "seed": spec.seed}
    try:
        inst = generate(spec)
        x0 = initialize(inst)
        cfg = SolverConfig.parse_step(step, **cfg_kwargs)
        res = solve(method, inst, x0, cfg)
        tr = res.trace
        times = [b.wall_seconds - a.wall_seconds for a, b in zip(tr, tr[1:])]
        row.update(
            status=res.status.value,
            iterations=tr[-1].iter,
            median_iter_seconds=statistics.median(times[1:]) if len(times) > 1 else (times[0] if times else None),
            iters_to_tol=tr[-1].iter if EXIT_CODES[res.status] == 0 else None,
            final_gradnorm=tr[-1].grad_norm,
            final_recovery_error=tr[-1].recovery_error,
            total_seconds=tr[-1].wall_seconds,
            error=None,
        )
    except Exception as exc:  # a failing cell is recorded and the sweep goes on
        row.update(status="Error", error=f"{type(exc).__name__}: {exc}")
    return row


def cmd_bench(args):
    methods = parse_methods(args.methods)
    ranks = args.ranks or ([args.k] if args.k else None)
    if not ranks:
        raise CliError("bench needs --ranks or --k")
    if args.iters is not None:
        cfg_kwargs = {"grad_tol": 0.0, "max_iters": args.iters, "max_time": args.max_time}
    else:
        cfg_kwargs = {"grad_tol": args.grad_tol, "max_iters": args.max_iters, "max_time": args.max_time,
                      "target_rel_error": args.target_rel_error}
    cells = []
    for k in ranks:
        for seed in args.seeds:
            try:
                spec = _generator_spec(args, k=k, seed=seed)
            except ValueError as exc:
                spec = exc
            for method, step in methods:
                cells.append((k, seed, spec, method, step))

    def run(cell):
        k, seed, spec, method, step = cell
        if isinstance(spec, Exception):
            return {"method": method, "step": step, "m": args.m, "n": args.n, "k": k,
                    "sampling": args.sampling["sampling"], "seed": seed, "status": "Error",
                    "error": f"{type(spec).__name__}: {spec}"}
        return run_cell(spec, method, step, cfg_kwargs)

    t0 = time.monotonic()
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = [run(c) for c in cells]
    out = _out_dir(args, "bench")
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for row in rows:
            w.writerow(["" if row.get(h) is None else _fmt(row.get(h)) for h in BENCH_HEADER])
    failed = sum(r["status"] == "Error" for r in rows)
    print(f"{len(rows)} cells ({failed} failed) in {time.monotonic() - t0:.1f}s -> {out / 'bench.csv'}")
    return 0


def main(argv=None):
    parser = build_parser()
    sub = _subparsers(parser)
    args = _apply_config(parser, sub, argv)
    missing = [f for f in args.required_flags if getattr(args, f) is None]
    if missing:
        sub[args.command].error(
            "the following arguments are required: " + ", ".join("--" + f.replace("_", "-") for f in missing)
        )
    try:
        return args.func(args)
    except (CliError, FormatError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"qprecon {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
