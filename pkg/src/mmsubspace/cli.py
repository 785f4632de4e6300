"""Command-line interface.

Subcommands ``denoise``, ``segment``, ``deblur`` and ``reconstruct`` build an
objective from an input file (or a synthetic phantom), run a solver and
write the result; ``epi``, ``check`` and ``bench`` run diagnostics.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .errors import ConfigurationError, DimensionError, PGMError, SolverError
from .imageio import (read_config, read_matrix_csv, read_pgm, write_matrix_csv, write_pgm,
                      write_trace_csv)
from .operators import ImageGrid, Radon
from .potentials import ALIASES, KINDS
from .problems import (ExperimentSpec, build_experiment, build_objective, snr)
from .solvers import SOLVERS, SolverConfig, solve

RESTORE_COMMANDS = {"denoise": "denoise", "segment": "segment", "deblur": "deblur",
                    "reconstruct": "tomo"}
POTENTIAL_CHOICES = sorted(set(KINDS) | set(ALIASES))
SNC_KINDS = ("geman_mcclure", "welsch", "tanh_pot", "tukey")


class UsageError(Exception):
    """Bad flags or configuration; reported with exit code 2."""


def _add_solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--solver", choices=SOLVERS, default="3mg", help="optimization algorithm")
    g.add_argument("--memory", type=int, default=1, help="3MG memory m (default 1)")
    g.add_argument("--inner-iters", type=int, default=1, help="inner MM iterations J")
    g.add_argument("--tol", type=float, default=1e-4, help="stop when ||g||/sqrt(N) < tol")
    g.add_argument("--max-iters", type=int, default=10000)
    g.add_argument("--init", choices=("zero", "convex_warmstart"), default="zero",
                   help="initial point: zeros, or a few convex 3MG iterations")
    g.add_argument("--warm-iters", type=int, default=10)
    g.add_argument("--lbfgs-memory", type=int, default=3)


def _add_restore_parser(sub, name, help_text):
    p = sub.add_parser(name, help=help_text, description=help_text)
    p.add_argument("--config", help="file of 'key = value' lines; flags take precedence")
    m = p.add_argument_group("model")
    m.add_argument("--pot", "--potential", dest="pot", choices=POTENTIAL_CHOICES,
                   default="geman_mcclure", help="edge-preserving potential")
    m.add_argument("--lambda", dest="lam", type=float, help="potential weight")
    m.add_argument("--delta", type=float, help="potential scale")
    m.add_argument("--rho", type=float, help="Hessian weight (deblur) or data scale (reconstruct)")
    m.add_argument("--theta", type=float, help="Hessian scale factor (deblur)")
    m.add_argument("--beta", type=float, help="box penalty weight")
    m.add_argument("--params", choices=("desk", "paper"), default="desk",
                   help="table of default parameters")
    d = p.add_argument_group("data")
    if name == "reconstruct":
        d.add_argument("--in", dest="input",
                       help="sinogram CSV (one row per angle); synthesized when absent")
    else:
        d.add_argument("--in", dest="input",
                       help="observed PGM image; a noisy phantom is synthesized when absent")
    d.add_argument("--truth", help="ground-truth PGM used to report the SNR")
    d.add_argument("--phantom", choices=("step1d", "two_region", "blocks2d", "disks"))
    d.add_argument("--width", type=int, default=32)
    d.add_argument("--height", type=int, default=32)
    d.add_argument("--noise", choices=("gaussian", "laplacian"))
    d.add_argument("--snr", type=float, help="noise level of synthesized data in dB")
    d.add_argument("--seed", type=int, default=0)
    if name == "deblur":
        d.add_argument("--blur-size", type=int, default=3)
    if name == "reconstruct":
        d.add_argument("--angles", type=int, default=24)
        d.add_argument("--detectors", type=int)
    _add_solver_flags(p)
    o = p.add_argument_group("output")
    o.add_argument("--out", help="result PGM (clamped and rounded)")
    o.add_argument("--out-raw", help="result as a CSV matrix at full precision")
    o.add_argument("--trace", help="per-iteration CSV trace")
    o.add_argument("--save-observed",
                   help="write synthesized data (PGM, or CSV sinogram for reconstruct)")
    o.add_argument("--save-truth", help="write the synthesized phantom as PGM")
    o.add_argument("--no-timing", action="store_true",
                   help="write zeros in the trace time column (byte-identical reruns)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmsubspace",
        description="MM memory-gradient image restoration with edge-preserving penalties.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    _add_restore_parser(sub, "denoise", "Denoise an image (H = [I; I], box penalty).")
    _add_restore_parser(sub, "segment", "Piecewise-constant smoothing of an image (H = I).")
    _add_restore_parser(sub, "deblur", "Deblur a uniformly blurred image with gradient "
                                       "and Hessian penalties.")
    _add_restore_parser(sub, "reconstruct", "Reconstruct an image from a parallel-beam "
                                            "sinogram with a robust data term.")

    p = sub.add_parser("epi", help="Minimize F_delta for delta = 2^-n and compare with the "
                                   "exact l0 minimum.",
                       description="Continuation in delta on the built-in 8-sample step "
                                   "signal; prints one row per delta and the exact l0 value.")
    p.add_argument("--n", type=int, default=12, help="largest exponent (delta_n = 2^-n)")
    p.add_argument("--pot", choices=POTENTIAL_CHOICES, default="welsch")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--signal", help="comma separated samples replacing the built-in signal")

    p = sub.add_parser("check", help="Run the invariant self-checks.",
                       description="Adjoint, gradient, majorant, descent and CG-equivalence "
                                   "suites; exits 1 if any fails.")
    p.add_argument("--suite", action="append",
                   choices=("adjoint", "gradient", "majorant", "descent", "cg"),
                   help="run only these suites (repeatable)")

    p = sub.add_parser("bench", help="Iteration counts of 3MG for memory m = 0..5.",
                       description="Memory sweep on a synthetic instance, optionally with "
                                   "the baseline solvers.")
    p.add_argument("--kind", choices=("denoise", "segment", "deblur", "tomo"), default="denoise")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--pot", action="append", choices=POTENTIAL_CHOICES,
                   help="potential (repeatable; default: all smooth kinds)")
    p.add_argument("--max-memory", type=int, default=5)
    p.add_argument("--baselines", action="store_true",
                   help="also run nonlinear CG variants and L-BFGS")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _apply_config(parser, argv):
    """Reparse ``argv`` with defaults taken from ``--config`` when given."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    values = read_config(path)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    aliases = {"lambda": "lam", "potential": "pot", "in": "input"}
    defaults = {}
    for key, raw in values.items():
        dest = aliases.get(key, key)
        action = actions.get(dest)
        if action is None or dest in ("help", "config"):
            raise UsageError(f"{path}: unknown key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            val = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                val = action.type(raw) if action.type else raw
            except ValueError:
                raise UsageError(f"{path}: bad value {raw!r} for {key!r}") from None
            if action.choices is not None and val not in action.choices:
                raise UsageError(f"{path}: {key} must be one of {sorted(action.choices)}")
        defaults[dest] = val
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _spec_from_args(args) -> ExperimentSpec:
    kind = RESTORE_COMMANDS[args.command]
    extra = {}
    if kind == "deblur":
        extra["blur_size"] = args.blur_size
    if kind == "tomo":
        extra["n_angles"] = args.angles
        extra["n_detectors"] = args.detectors
    return ExperimentSpec(kind=kind, potential=args.pot, lam=args.lam, delta=args.delta,
                          rho=args.rho, theta=args.theta, beta=args.beta, width=args.width,
                          height=args.height, phantom=args.phantom, noise=args.noise,
                          snr_db=args.snr, seed=args.seed, params=args.params, **extra)


def _solver_config(args) -> SolverConfig:
    return SolverConfig(memory=args.memory, inner_iters=args.inner_iters, tol=args.tol,
                        max_iters=args.max_iters, init=args.init, warm_iters=args.warm_iters,
                        lbfgs_memory=args.lbfgs_memory)


def run_restore(args, out) -> int:
    spec = _spec_from_args(args)
    truth = read_pgm(args.truth) if args.truth else None
    if args.input:
        if truth is not None:
            spec = spec.replace(width=truth.width, height=truth.height)
        if spec.kind == "tomo":
            sino = read_matrix_csv(args.input)
            angles, detectors = sino.shape
            spec = spec.replace(n_angles=angles, n_detectors=detectors)
            geometry = Radon(spec.width, spec.height, angles, detectors)
            obj = build_objective(spec, sino.ravel(), geometry)
        else:
            observed = read_pgm(args.input)
            if truth is not None and (truth.width, truth.height) != (observed.width,
                                                                     observed.height):
                raise DimensionError("ground truth size", (observed.width, observed.height),
                                     (truth.width, truth.height))
            spec = spec.replace(width=observed.width, height=observed.height)
            obj = build_objective(spec, observed)
    else:
        exp = build_experiment(spec, truth)
        obj, truth = exp.objective, exp.truth
        if args.save_observed:
            if spec.kind == "tomo":
                write_matrix_csv(args.save_observed, exp.observed, width=exp.extra[
                    "geometry"].n_detectors)
            else:
                write_pgm(args.save_observed, exp.observed)
        if args.save_truth:
            write_pgm(args.save_truth, exp.truth)
        print(f"synthetic {spec.phantom} phantom {spec.width}x{spec.height}, {spec.noise} "
              f"noise at {spec.snr_db:g} dB, seed {spec.seed}", file=out)
    print(f"model: {spec.kind}, potential {spec.potential} (lambda={spec.lam:g}, "
          f"delta={spec.delta:g}), N={obj.N}", file=out)
    wp = obj.check_wellposed() if obj.N <= 4096 or obj.tau > 0 else None
    if wp is not None and not wp.ok:
        print("warning: H is not injective and tau = 0; the criterion may not be coercive",
              file=sys.stderr)
    cfg = _solver_config(args)
    res = solve(args.solver, obj, None, cfg)
    image = ImageGrid(spec.width, spec.height, res.x)
    if args.out:
        write_pgm(args.out, image)
    if args.out_raw:
        write_matrix_csv(args.out_raw, image)
    if args.trace:
        write_trace_csv(args.trace, res.trace, timing=not args.no_timing)
    print(f"solver: {res.solver}, termination: {res.termination}", file=out)
    print(f"F = {res.objective:.12g}", file=out)
    print(f"iterations = {res.iterations}", file=out)
    print(f"time_s = {0.0 if args.no_timing else res.time:.3f}", file=out)
    if truth is not None:
        print(f"SNR_dB = {snr(res.x, truth):.4f}", file=out)
    return 0


def run_epi(args, out) -> int:
    from .l0 import STEP_LAMBDA, epi_convergence_table, step_instance
    if args.n < 0:
        raise UsageError("--n must be nonnegative")
    signal = None
    if args.signal:
        try:
            signal = np.array([float(v) for v in args.signal.split(",")])
        except ValueError:
            raise UsageError("--signal must be comma separated numbers") from None
    lam = STEP_LAMBDA if args.lam is None else args.lam
    family, inst = step_instance(ALIASES.get(args.pot, args.pot), lam, signal)
    table = epi_convergence_table(family, [2.0 ** -n for n in range(args.n + 1)], inst)
    print(table.format(), file=out)
    print(f"nondecreasing: {'yes' if table.nondecreasing else 'no'}", file=out)
    return 0


def run_check(args, out) -> int:
    from . import checks
    suites = {"adjoint": checks.adjoint_suite, "gradient": checks.gradient_suite,
              "majorant": checks.majorant_suite, "descent": checks.descent_suite,
              "cg": checks.cg_suite}
    names = args.suite or list(suites)
    ok = True
    for name in names:
        res = suites[name]()
        print(res.line(), file=out)
        ok = ok and res.passed
    print("all checks passed" if ok else "some checks FAILED", file=out)
    return 0 if ok else 1


def run_bench(args, out) -> int:
    pots = [ALIASES.get(p, p) for p in (args.pot or ("sc_hyperbolic",) + SNC_KINDS)]
    if args.max_memory < 0 or args.size < 2:
        raise UsageError("--max-memory must be >= 0 and --size >= 2")
    print(f"{'potential':<15}{'solver':<12}{'iters':>7}{'time_s':>9}{'F':>20}{'SNR_dB':>9}",
          file=out)
    for pot in pots:
        exp = build_experiment(ExperimentSpec(kind=args.kind, potential=pot, width=args.size,
                                              height=args.size, seed=args.seed))
        runs = [(f"3MG-{m}", "3mg", SolverConfig(memory=m)) for m in range(args.max_memory + 1)]
        if args.baselines:
            runs += [(name.upper(), name, SolverConfig())
                     for name in ("nlcg_hs", "nlcg_prp+", "nlcg_ls", "lbfgs")]
        for label, name, cfg in runs:
            res = solve(name, exp.objective, None, cfg)
            print(f"{pot:<15}{label:<12}{res.iterations:>7}{res.time:>9.3f}"
                  f"{res.objective:>20.10g}{snr(res.x, exp.truth):>9.3f}", file=out)
    return 0


def run_cli(argv=None, out=None) -> int:
    """Entry point; returns the process exit code."""
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except (UsageError, ConfigurationError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handlers = {"epi": run_epi, "check": run_check, "bench": run_bench}
    handler = handlers.get(args.command, run_restore)
    try:
        return handler(args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, DimensionError, PGMError, SolverError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
