"""Command-line front end.

Every run prints one JSON envelope carrying the tool version, the full
effective configuration, the seed, and the result, so any output can be
reproduced from itself. Results go to stdout or --out; everything else
goes to stderr. Exit codes: 0 success, 1 bad input, 2 numerical failure.
"""

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .bounds import malliavin_stein_upper
from .chaos import GammaTarget, SpectralForm, cumulant_spectral, cumulant_target
from .distance import build_test_family, d2_lower_estimate
from .errors import ValidationError, WglabError
from .experiments import (ExperimentSpec, example_form, run_experiment,
                          write_csv, write_gnuplot)
from .grids import GridFunction, GridSpec
from .stein import default_grid, solve_stein

_NOT_CONFIG = ("handler", "command", "bound_command", "stein_command",
               "distance_command", "experiment_command", "config")


class _Parser(argparse.ArgumentParser):
    # usage problems are input problems: exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_n_list(text: str) -> tuple:
    """Comma list of sizes; 'a,b,...,z' fills arithmetically from step b-a."""
    toks = [t.strip() for t in str(text).split(",")]
    if "..." in toks:
        if len(toks) != 4 or toks.index("...") != 2:
            raise ValidationError(
                f"size fill must look like 10,20,...,1000, got {text!r}")
        a, b, z = int(toks[0]), int(toks[1]), int(toks[3])
        step = b - a
        if step <= 0:
            raise ValidationError(f"fill step must be positive, got {step}")
        if (z - a) % step != 0 or z < a:
            raise ValidationError(
                f"fill endpoint {z} is not reachable from {a} in steps of {step}")
        return tuple(range(a, z + 1, step))
    try:
        return tuple(int(t) for t in toks)
    except ValueError as exc:
        raise ValidationError(f"bad size list {text!r}: {exc}") from exc


def parse_eigenvalues(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in str(text).split(",")])
    except ValueError as exc:
        raise ValidationError(f"bad eigenvalue list {text!r}: {exc}") from exc


def parse_grid(text: str) -> GridSpec:
    toks = str(text).split(",")
    if len(toks) != 3:
        raise ValidationError(f"grid must be lo,hi,n_points, got {text!r}")
    return GridSpec(float(toks[0]), float(toks[1]), int(toks[2]))


def _smoothstep(a: float, b: float):
    span = b - a

    def fn(x):
        t = np.clip((np.asarray(x, dtype=float) - a) / span, 0.0, 1.0)
        return t * t * (3.0 - 2.0 * t)

    return fn


def resolve_h(text: str, grid: GridSpec) -> GridFunction:
    """A grid-function argument: a JSON file path, or one of the built-in
    names identity, sin:W, ramp:A,B."""
    if os.path.exists(text):
        with open(text) as fh:
            return GridFunction.from_json(json.load(fh))
    if text == "identity":
        return GridFunction.from_callable(grid, lambda x: x,
                                          lip_norm=1.0, curv_norm=0.0)
    if text.startswith("sin:"):
        w = float(text[4:])
        if not w > 0.0:
            raise ValidationError(f"sin frequency must be positive, got {w}")
        return GridFunction.from_callable(grid, lambda x: np.sin(w * x),
                                          lip_norm=w, curv_norm=w * w)
    if text.startswith("ramp:"):
        parts = text[5:].split(",")
        if len(parts) != 2:
            raise ValidationError("ramp takes two knots: ramp:A,B")
        a, b = float(parts[0]), float(parts[1])
        if not b > a:
            raise ValidationError(f"ramp needs A < B, got {a}, {b}")
        return GridFunction.from_callable(grid, _smoothstep(a, b),
                                          lip_norm=1.5 / (b - a),
                                          curv_norm=6.0 / (b - a) ** 2)
    raise ValidationError(
        f"{text!r} is neither a file nor one of identity, sin:W, ramp:A,B")


def _example_params(args) -> dict:
    params = {}
    for key in ("theta", "beta", "alpha", "basis"):
        val = getattr(args, key, None)
        if val is not None:
            params[key] = val
    return params


def _cmd_cumulants(args):
    if args.eigenvalues is None and args.nu is None:
        raise ValidationError("give --eigenvalues, --nu, or both")
    if args.p < 2:
        raise ValidationError(f"cumulant order must be >= 2, got {args.p}")
    result = {"p": args.p}
    if args.eigenvalues is not None:
        form = SpectralForm(parse_eigenvalues(args.eigenvalues))
        result["spectral"] = cumulant_spectral(form, args.p)
    if args.nu is not None:
        result["target"] = float(cumulant_target(GammaTarget(args.nu), args.p))
    if "spectral" in result and "target" in result:
        result["difference"] = result["spectral"] - result["target"]
    return result


def _cmd_bound_report(args):
    if (args.spec is None) == (args.example is None):
        raise ValidationError("give exactly one of --spec or --example")
    target = GammaTarget(args.nu)
    if args.spec is not None:
        with open(args.spec) as fh:
            form = SpectralForm.from_json(json.load(fh))
        scale = None
    else:
        if args.n is None:
            raise ValidationError("--example needs --n")
        form, scale = example_form(args.example, args.n, args.nu,
                                   _example_params(args))
    result = malliavin_stein_upper(form, target).to_json()
    if scale is not None:
        result["scale_factor"] = scale
    return result


def _cmd_stein_solve(args):
    grid = parse_grid(args.grid) if args.grid else default_grid(float(args.nu))
    h = resolve_h(args.h, grid)
    sol = solve_stein(h, GammaTarget(args.nu))
    return {"solution": sol.solution.to_json(),
            "derivative": sol.derivative.to_json(),
            "expectation": sol.solution.meta.get("expectation"),
            "quadrature_error_estimate": sol.quadrature_error_estimate}


def _cmd_distance_d2(args):
    with open(args.spec) as fh:
        form = SpectralForm.from_json(json.load(fh))
    target = GammaTarget(args.nu)
    grid = parse_grid(args.grid) if args.grid else default_grid(float(args.nu))
    family = build_test_family(grid, args.family_size)
    est = d2_lower_estimate(form, target, family, args.draws, args.seed,
                            method=args.method)
    return est.to_json()


def _default_threads():
    env = os.environ.get("WGL_THREADS")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise ValidationError(f"WGL_THREADS must be an integer, got {env!r}") \
            from exc


def _cmd_experiment_run(args):
    threads = args.threads if args.threads is not None else _default_threads()
    spec = ExperimentSpec(name=args.name, n_list=parse_n_list(args.n),
                          nu=args.nu, params=_example_params(args),
                          draws=args.draws, seed=args.seed,
                          family_size=args.family_size,
                          with_d2=args.with_d2, with_tv=args.with_tv)
    report = run_experiment(spec, threads=threads, fit_all=args.fit_all)
    if args.csv:
        write_csv(report, args.csv)
        print(f"wrote {args.csv}", file=sys.stderr)
    if args.gnuplot:
        write_gnuplot(report, args.gnuplot)
        print(f"wrote {args.gnuplot}", file=sys.stderr)
    return report.to_json()


def build_parser(suppress_defaults: bool = False) -> _Parser:
    """The CLI grammar.

    With suppress_defaults the namespace carries only flags actually given
    on the command line; parsing twice (once each way) is what lets --config
    fill defaults without overriding explicit flags.
    """
    sup = argparse.SUPPRESS

    def add(sub, *names, **kw):
        if suppress_defaults:
            kw["default"] = sup
        sub.add_argument(*names, **kw)

    def common(sub):
        add(sub, "--out", help="write the JSON envelope to this file")
        add(sub, "--config",
            help="JSON file of flag defaults (explicit flags win)")
        add(sub, "--no-timestamp", action="store_true",
            help="omit the timestamp so reruns are byte-identical")
        add(sub, "--verbose", "-v", action="store_true",
            help="timing diagnostics on stderr")

    parser = _Parser(prog="wglab",
                     description="Second-chaos Gamma approximation toolkit")
    parser.add_argument("--version", action="version",
                        version=f"wglab {__version__}")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)

    cum = subs.add_parser("cumulants", help="spectral and target cumulants")
    add(cum, "--eigenvalues", help="comma list, e.g. 1,1")
    add(cum, "--nu", type=float, help="target shape parameter")
    add(cum, "--p", type=int, required=True, help="cumulant order")
    common(cum)
    cum.set_defaults(handler=_cmd_cumulants)

    bound = subs.add_parser("bound", help="upper-bound reports")
    bsubs = bound.add_subparsers(dest="bound_command", required=True,
                                 parser_class=_Parser)
    brep = bsubs.add_parser("report", help="five-term estimate for one form")
    add(brep, "--spec", help="spectral form JSON file")
    add(brep, "--example",
        choices=("naive", "ustat", "ar1", "ar2", "holder_qf"),
        help="built-in family instead of --spec")
    add(brep, "--n", type=int, help="family size for --example")
    add(brep, "--nu", type=float, required=True)
    add(brep, "--theta", type=float, help="ar2 angle")
    add(brep, "--beta", type=float, help="ar1 drift")
    add(brep, "--alpha", type=float, help="holder_qf exponent")
    add(brep, "--basis", choices=("trig", "holder"), help="holder_qf basis")
    common(brep)
    brep.set_defaults(handler=_cmd_bound_report)

    stein = subs.add_parser("stein", help="Stein-equation solver")
    ssubs = stein.add_subparsers(dest="stein_command", required=True,
                                 parser_class=_Parser)
    ssolve = ssubs.add_parser("solve", help="bounded solution and derivative")
    add(ssolve, "--nu", type=float, required=True)
    add(ssolve, "--h", required=True,
        help="grid function JSON file, or identity, sin:W, ramp:A,B")
    add(ssolve, "--grid", help="lo,hi,n_points (default: tuned to nu)")
    common(ssolve)
    ssolve.set_defaults(handler=_cmd_stein_solve)

    dist = subs.add_parser("distance", help="distance estimates")
    dsubs = dist.add_subparsers(dest="distance_command", required=True,
                                parser_class=_Parser)
    dd2 = dsubs.add_parser("d2", help="lower estimate over a test family")
    add(dd2, "--spec", required=True, help="spectral form JSON file")
    add(dd2, "--nu", type=float, required=True)
    add(dd2, "--draws", type=int, default=1_000_000)
    add(dd2, "--seed", type=int, default=0)
    add(dd2, "--family-size", type=int, default=64)
    add(dd2, "--method", choices=("mc", "quadrature"), default="mc")
    add(dd2, "--grid", help="lo,hi,n_points (default: tuned to nu)")
    common(dd2)
    dd2.set_defaults(handler=_cmd_distance_d2)

    exp = subs.add_parser("experiment", help="rate studies across n")
    esubs = exp.add_subparsers(dest="experiment_command", required=True,
                               parser_class=_Parser)
    erun = esubs.add_parser("run", help="bound pipeline over a size list")
    add(erun, "--name", required=True,
        choices=("naive", "ustat", "ar1", "ar2", "holder_qf"))
    add(erun, "--n", required=True,
        help="comma list; 10,20,...,1000 fills arithmetically")
    add(erun, "--nu", type=float, required=True)
    add(erun, "--draws", type=int, default=200_000)
    add(erun, "--seed", type=int, default=0)
    add(erun, "--family-size", type=int, default=16)
    add(erun, "--with-d2", action="store_true",
        help="add the Monte Carlo lower estimate per n")
    add(erun, "--with-tv", action="store_true",
        help="add closed-form total variation (naive, nu=2)")
    add(erun, "--fit-all", action="store_true",
        help="keep the two smallest n in the slope fits")
    add(erun, "--theta", type=float, help="ar2 angle")
    add(erun, "--beta", type=float, help="ar1 drift")
    add(erun, "--alpha", type=float, help="holder_qf exponent")
    add(erun, "--basis", choices=("trig", "holder"), help="holder_qf basis")
    add(erun, "--threads", type=int,
        help="worker count (default: WGL_THREADS or 4)")
    add(erun, "--csv", help="also write the per-n table as CSV")
    add(erun, "--gnuplot", help="also write a gnuplot data file")
    common(erun)
    erun.set_defaults(handler=_cmd_experiment_run)

    return parser


def _apply_config(args, explicit: set) -> None:
    with open(args.config) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValidationError("--config must hold a JSON object")
    for key, val in cfg.items():
        dest = key.replace("-", "_")
        if dest in _NOT_CONFIG or not hasattr(args, dest):
            raise ValidationError(
                f"config key {key!r} is not a flag of this subcommand")
        if dest not in explicit:
            setattr(args, dest, val)


def _envelope(args, result) -> dict:
    config = {}
    for key, val in sorted(vars(args).items()):
        if key in ("handler",):
            continue
        config[key] = list(val) if isinstance(val, tuple) else val
    out = {"tool": "wglab", "version": __version__, "command": args.command,
           "config": config, "seed": getattr(args, "seed", None)}
    if not args.no_timestamp:
        out["timestamp"] = datetime.now(timezone.utc).isoformat()
    out["result"] = result
    return out


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.monotonic()
    try:
        if getattr(args, "config", None):
            given = build_parser(suppress_defaults=True).parse_args(argv)
            _apply_config(args, set(vars(given)))
        result = args.handler(args)
        text = json.dumps(_envelope(args, result), indent=2) + "\n"
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
            print(f"wrote {args.out}", file=sys.stderr)
        else:
            sys.stdout.write(text)
    except ValidationError as exc:
        print(f"wglab: {exc}", file=sys.stderr)
        return 1
    except WglabError as exc:
        print(f"wglab: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"wglab: {exc}", file=sys.stderr)
        return 1
    if args.verbose:
        print(f"wglab: {args.command} finished in "
              f"{time.monotonic() - t0:.2f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
