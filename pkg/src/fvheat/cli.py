"""Command-line front end: ``fvheat {mesh,solve,convergence,probe,qnorm}``.

Every command writes its effective configuration to ``<out>/<command>.config``
as ``key = value`` lines (values in JSON syntax). Passing that file back with
``--config`` reruns the command; flags given on the command line win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .assembly import CoefficientField
from .exceptions import FVHeatError
from .mesh import generate, save_mesh, symmetry_report
from .operators import FVESystem
from .timestepping import TimeGrid

log = logging.getLogger("fvheat")

FAMILY_CHOICES = ("symmetric", "almost", "piecewise", "stripes", "interface")
DEFAULT_SWEEPS = {"interface": (2, 4, 8, 16)}
DEFAULT_SWEEP = (8, 16, 32, 64)
# the stripes probe needs one more level before the fitted rate settles near 1
PROBE_SWEEPS = {"stripes": (16, 32, 64, 128), "interface": (4, 8, 16, 32)}
NOT_SAVED = ("config", "func")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config files


def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        try:
            out[key.strip().replace("-", "_")] = json.loads(value.strip())
        except json.JSONDecodeError as err:
            raise UsageError(f"{path}:{lineno}: bad value: {err}") from None
    return out


def write_config(args, path) -> None:
    lines = [f"{k} = {json.dumps(v)}" for k, v in sorted(vars(args).items())
             if k not in NOT_SAVED]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# argument helpers


def int_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def float_list(text):
    try:
        vals = []
        for s in text.split(","):
            s = s.strip()
            if "/" in s:
                num, den = s.split("/")
                vals.append(float(num) / float(den))
            elif s:
                vals.append(float(s))
        return vals
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


_NAMESPACE = {name: getattr(np, name) for name in
              ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi", "sinh", "cosh", "tanh")}


def _expression(expr):
    code = compile(expr, "<coefficient>", "eval")

    def f(x, y):
        return np.broadcast_to(eval(code, {"__builtins__": {}}, {**_NAMESPACE, "x": x, "y": y}),
                               np.broadcast(x, y).shape).astype(float)
    return f


def parse_alpha(text):
    """``a`` (isotropic), ``a;b`` (diagonal) or ``a;b;c`` (entries 11, 12=21, 22)."""
    parts = [_expression(p) for p in text.split(";")]
    if len(parts) == 1:
        return parts[0]
    if len(parts) not in (2, 3):
        raise UsageError("--alpha takes 1, 2 or 3 ';'-separated expressions")

    def alpha(x, y):
        a11, a22 = parts[0](x, y), parts[-1](x, y)
        a12 = parts[1](x, y) if len(parts) == 3 else np.zeros_like(a11)
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)
    return alpha


def coefficients_from(args):
    """(CoefficientField or None, exact-solution factory or None, initial series)."""
    if args.operator == "laplacian":
        if args.alpha or args.beta:
            raise UsageError("--alpha/--beta need --operator general")
        series = analysis.EigenSeriesData.first_mode()
        return None, (lambda t: analysis.exact_solution(series, t)), series
    if not args.alpha and not args.beta or args.alpha == "manufactured":
        prob = analysis.ManufacturedProblem()
        return prob.coefficients, prob.solution, prob.initial
    alpha = parse_alpha(args.alpha) if args.alpha else None
    beta = _expression(args.beta) if args.beta else None
    return CoefficientField(alpha, beta), None, analysis.EigenSeriesData.first_mode()


def mesh_from(args):
    if args.family == "interface":
        if args.j is None:
            raise UsageError("--family interface needs --j")
        level = args.j
    else:
        if args.n is None:
            raise UsageError(f"--family {args.family} needs --n")
        level = args.n
    return analysis.make_mesh(args.family, level, args.seed, args.amplitude, args.layout), level


def out_dir(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# commands


def cmd_mesh(args):
    mesh, level = mesh_from(args)
    out = out_dir(args)
    stem = f"mesh_{args.family}_{level}"
    save_mesh(mesh, out / f"{stem}.txt")
    sym = symmetry_report(mesh)
    n_asym = int((~sym).sum())
    asym = f"{n_asym} (all interior)" if n_asym == len(sym) and n_asym else str(n_asym)
    report = (f"family: {mesh.meta.get('family', args.family)}\nvertices: {mesh.n_vertices}\n"
              f"triangles: {mesh.n_triangles}\ninterior: {mesh.n_dofs}\nh_max: {mesh.h_max!r}\n"
              f"symmetric: {int(sym.sum())}\nasymmetric: {asym}\n")
    (out / f"{stem}.report.txt").write_text(report)
    write_config(args, out / "mesh.config")
    print(report, end="")
    return 0


def cmd_solve(args):
    if args.scheme != "semidiscrete":
        if args.k is None or not args.k > 0:
            raise UsageError(f"--scheme {args.scheme} needs a positive --k")
        try:
            TimeGrid.reaching(args.t, args.k)
        except FVHeatError as err:
            raise UsageError(str(err)) from None
    coeffs, exact_at, series = coefficients_from(args)
    mesh, level = mesh_from(args)
    system = FVESystem(mesh, coeffs, quad_order=args.quad_order)
    v_h = analysis.initial_data(system, series, args.initial)
    u_h = analysis.evolve(system, v_h, args.scheme, args.t, args.k, args.propagator, args.tol)
    out = out_dir(args)
    full = mesh.extend(u_h)
    lines = [f"{x!r} {y!r} {u!r}" for (x, y), u in zip(mesh.vertices.tolist(), full.tolist())]
    (out / "solution.txt").write_text("\n".join(lines) + "\n")
    report = {"family": args.family, "N": level, "h": mesh.h_max, "scheme": args.scheme,
              "t": args.t, "k": args.k, "operator": args.operator, "n_dofs": mesh.n_dofs}
    if exact_at is not None:
        l2, h1 = analysis.error_norms(mesh, u_h, exact_at(args.t), args.quad_order)
        report.update(err_l2=l2, err_h1=h1)
    (out / "solve.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_config(args, out / "solve.config")
    print(json.dumps(report, sort_keys=True))
    return 0


def _sweep(args, table=None):
    if args.sweep:
        return tuple(args.sweep)
    return (table or DEFAULT_SWEEPS).get(args.family, DEFAULT_SWEEP)


def _finish(args, table, name, column):
    out = out_dir(args)
    table.to_csv(out / f"{name}.csv", timing=args.timing)
    table.to_json(out / f"{name}.json", timing=args.timing)
    write_config(args, out / f"{name}.config")
    sys.stdout.write(table.to_csv(timing=args.timing))
    status = 0
    failed = table.meta.get("failed", [])
    for row in failed:
        print(f"row N={row['N']} failed: {row['error']}", file=sys.stderr)
        status = 1
    if len(table.rows) < 2:
        if args.assert_rate is not None or args.assert_rate_max is not None:
            print("not enough completed rows to fit a rate", file=sys.stderr)
            return 1
        return status
    rate = table.fitted_rate(column)
    print(f"fitted {column} rate (last {table.fit_levels} levels): {rate:.4f}")
    if args.assert_rate is not None and not rate >= args.assert_rate:
        print(f"rate check failed: {column} rate {rate:.4f} < {args.assert_rate}", file=sys.stderr)
        status = 1
    if args.assert_rate_max is not None and not rate <= args.assert_rate_max:
        print(f"rate check failed: {column} rate {rate:.4f} > {args.assert_rate_max}",
              file=sys.stderr)
        status = 1
    return status


def cmd_convergence(args):
    if args.sweep_kind == "k":
        if args.scheme == "semidiscrete":
            raise UsageError("a k-sweep needs a fully discrete --scheme")
        data = "smooth-general" if args.operator == "general" else "smooth"
        ks = tuple(args.ks or (1 / 10, 1 / 20, 1 / 40, 1 / 80))
        table = analysis.temporal_study(args.family, args.n or 64, ks, args.scheme, data,
                                        args.initial, args.t, seed=args.seed,
                                        amplitude=args.amplitude, fit_levels=args.fit_levels,
                                        tol=args.tol)
    else:
        if args.scheme != "semidiscrete" and args.k is None:
            raise UsageError(f"--scheme {args.scheme} needs --k")
        coeffs, _, _ = coefficients_from(args)
        data = args.data
        if args.operator == "general" and data == "smooth":
            data = "smooth-general"
        if data == "smooth-general" and coeffs is not None and args.alpha not in (None, "manufactured"):
            raise UsageError("custom coefficients have no exact solution; use --alpha manufactured")
        table = analysis.convergence_study(args.family, _sweep(args), data, args.initial,
                                           args.scheme, args.t, args.k, seed=args.seed,
                                           amplitude=args.amplitude, propagator=args.propagator,
                                           tol=args.tol, quad_order=args.quad_order,
                                           fit_levels=args.fit_levels, jobs=args.jobs)
    return _finish(args, table, "convergence", args.column)


def cmd_probe(args):
    table = analysis.probe_study(args.family, _sweep(args, PROBE_SWEEPS), args.pattern, args.t,
                                 args.d, seed=args.seed, amplitude=args.amplitude,
                                 propagator=args.propagator, tol=args.tol,
                                 fit_levels=args.fit_levels, jobs=args.jobs)
    return _finish(args, table, "probe", "probe")


def cmd_qnorm(args):
    table = analysis.qnorm_study(args.family, _sweep(args), seed=args.seed,
                                 amplitude=args.amplitude, max_iter=args.max_iter,
                                 fit_levels=args.fit_levels, jobs=args.jobs)
    for n, info in sorted(table.meta.get("power_iteration", {}).items()):
        if not info["converged"]:
            print(f"warning: power iteration at N={n} stopped after {info['iterations']} "
                  f"iterations without converging", file=sys.stderr)
    return _finish(args, table, "qnorm", "probe")


# ---------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=int, default=0, help="RNG seed for perturbed meshes and data")
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    common.add_argument("--quad-order", type=int, default=4, choices=range(1, 6),
                        help="triangle quadrature degree")
    common.add_argument("--tol", type=float, default=1e-8, help="substep propagation accuracy")
    common.add_argument("--config", help="read defaults from a saved .config file")
    common.add_argument("-v", "--verbose", action="store_true")

    family = argparse.ArgumentParser(add_help=False)
    family.add_argument("--family", choices=FAMILY_CHOICES, default="symmetric")
    family.add_argument("--amplitude", type=float, default=1.0,
                        help="perturbation amplitude in units of h^2 (almost/piecewise)")
    family.add_argument("--layout", default="halves", help="piecewise layout name")

    single = argparse.ArgumentParser(add_help=False)
    single.add_argument("--n", type=int, help="grid parameter N")
    single.add_argument("--j", type=int, help="interface mesh parameter J")

    sweep = argparse.ArgumentParser(add_help=False)
    sweep.add_argument("--sweep", type=int_list, help="comma-separated levels (N, or J for interface)")
    sweep.add_argument("--fit-levels", type=int, default=3)
    sweep.add_argument("--assert-rate", type=float, help="fail unless fitted rate >= MIN")
    sweep.add_argument("--assert-rate-max", type=float, help="fail unless fitted rate <= MAX")
    sweep.add_argument("--timing", action="store_true", help="fill the seconds column")

    problem = argparse.ArgumentParser(add_help=False)
    problem.add_argument("--scheme", choices=analysis.SCHEMES, default="semidiscrete")
    problem.add_argument("--t", type=float, default=0.1)
    problem.add_argument("--k", type=float)
    problem.add_argument("--initial", choices=("ritz", "l2", "interp"), default="ritz")
    problem.add_argument("--operator", choices=("laplacian", "general"), default="laplacian")
    problem.add_argument("--alpha", help="'manufactured' or numpy expressions in x, y: a | a;b | a;b;c")
    problem.add_argument("--beta", help="numpy expression in x, y")
    problem.add_argument("--propagator", choices=("auto", "eigen", "substep"), default="auto")

    p = argparse.ArgumentParser(prog="fvheat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mesh", parents=[common, family, single], help="generate a mesh and patch report")
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("solve", parents=[common, family, single, problem], help="one solve")
    s.set_defaults(func=cmd_solve, n=32)

    s = sub.add_parser("convergence", parents=[common, family, sweep, problem],
                       help="error-rate study over a sweep")
    s.add_argument("--data", choices=("smooth", "smooth-general"), default="smooth")
    s.add_argument("--column", choices=("err_l2", "err_h1"), default="err_l2")
    s.add_argument("--sweep-kind", choices=("h", "k"), default="h")
    s.add_argument("--ks", type=float_list, help="time steps for a k-sweep, e.g. 1/10,1/20")
    s.add_argument("--n", type=int, help="mesh level for a k-sweep (default 64)")
    s.set_defaults(func=cmd_convergence)

    s = sub.add_parser("probe", parents=[common, family, sweep], help="nonsmooth-data probe sweep")
    s.add_argument("--pattern", choices=("stripes", "interface", "random-l2"))
    s.add_argument("--t", type=float, default=0.1)
    s.add_argument("--d", type=float, default=0.06, help="half-width of the probe square")
    s.add_argument("--propagator", choices=("auto", "eigen", "substep"), default="auto")
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("qnorm", parents=[common, family, sweep], help="||Q_h|| sweep")
    s.add_argument("--max-iter", type=int, default=500)
    s.set_defaults(func=cmd_qnorm)
    return p, sub


def parse(argv):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config(args.config)
        except OSError as err:
            parser.error(f"cannot read config: {err}")
        except UsageError as err:
            parser.error(str(err))
        cmd = values.pop("command", args.command)
        if cmd != args.command:
            parser.error(f"config is for {cmd!r}, not {args.command!r}")
        subparser = sub.choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return parser, args


def main(argv=None):
    parser, args = parse(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as err:
        parser.error(str(err))
    except FVHeatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
