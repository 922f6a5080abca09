"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.  Errors are
reported as a JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from .bandwidth import (
    SELECTORS,
    BandwidthChoice,
    choose_bandwidth,
    equivalent_kernel,
    fixed_bandwidth,
    k_star,
    rho_opt_detail,
)
from .design import LpConfig, resolve_boundary
from .edgeworth import pilot_bandwidth
from .errors import LpciError
from .harness import DEFAULT_METHODS, run_mc
from .inference import build_ci
from .kernels import NAMED_KERNELS, get_kernel

EXIT_INPUT = 2
EXIT_NUMERIC = 3
CURVE_POINTS = 401


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _fmt(x) -> str:
    # adding 0.0 turns -0.0 into 0.0
    return format(float(x) + 0.0, ".17g")


# -- data and config ---------------------------------------------------------------


def read_dataset(path: str):
    """Read a two-column CSV with header ``x,y``; rows are numbered from 1 at the header."""
    try:
        fh = sys.stdin if path == "-" else open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip().lower() for c in rows[0]] != ["x", "y"]:
        raise InputError("row 1: header must be 'x,y'")
    xs, ys = [], []
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise InputError(f"row {i}: expected 2 fields, got {len(row)}")
        try:
            x, y = float(row[0]), float(row[1])
        except ValueError:
            raise InputError(f"row {i}: non-numeric value {row!r}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InputError(f"row {i}: non-finite value {row!r}")
        xs.append(x)
        ys.append(y)
    if not xs:
        raise InputError("dataset has no observations")
    return np.array(xs), np.array(ys)


def read_config(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys use flag names."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot open config {path}: {exc.strerror}") from None
    for i, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {i}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val.strip("'\"")
    return out


# -- argument helpers -------------------------------------------------------------------


def _positive(text):
    v = float(text)
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _rho(text):
    return "auto" if str(text).lower() == "auto" else _positive(text)


def _bw(text):
    return text if text in SELECTORS else _positive(text)


def _level(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return v


def _kernel(text):
    try:
        return get_kernel(text).kind
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_model_flags(sp):
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--deriv", type=int, default=0)
    sp.add_argument("--kernel", type=_kernel, default="epanechnikov")
    sp.add_argument("--eval", type=float, default=0.0)
    sp.add_argument("--boundary", choices=("auto", "interior", "left", "right"), default="auto")
    sp.add_argument("--rho", type=_rho, default=1.0, help="h/b ratio or 'auto' for the L2-optimal value")
    sp.add_argument("--level", type=_level, default=0.95)
    sp.add_argument("--weight", type=float, default=0.5, help="trade-off weight on bias")
    sp.add_argument("--eta-to", type=float, default=None)
    sp.add_argument("--nodes", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lpci", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help="key=value file; flags take precedence")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, method in (("fit", "conventional"), ("ci", "rbc")):
        sp = sub.add_parser(name, help=f"{'point estimate' if name == 'fit' else 'confidence interval'} at one point")
        _add_model_flags(sp)
        sp.add_argument("--method", choices=("conventional", "rbc"), default=method)
        sp.add_argument("--bw", type=_bw, default="ce", help="mse, ce, to, us or a fixed h")
        sp.add_argument("--flavor", choices=("HC0", "HC1", "HC2", "HC3"), default="HC0")
        sp.add_argument("data")

    sp = sub.add_parser("bwselect", help="bandwidth selection only")
    _add_model_flags(sp)
    sp.add_argument("--bw", choices=SELECTORS, default="ce")
    sp.add_argument("data")

    sp = sub.add_parser("rho-table", help="L2-optimal bandwidth ratios")
    sp.add_argument("--kernels", default="uniform,triangular,epanechnikov")
    sp.add_argument("--pmax", type=int, default=3)
    sp.add_argument("--nodes", type=int, default=64)

    sp = sub.add_parser("kernel-curves", help="equivalent kernel curves on a grid")
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--deriv", type=int, default=0)
    sp.add_argument("--kernel", type=_kernel, default="epanechnikov")
    sp.add_argument("--boundary", choices=("interior", "left", "right"), default="interior")
    sp.add_argument("--rho", type=_rho, default="auto")
    sp.add_argument("--nodes", type=int, default=64)

    sp = sub.add_parser("simulate", help="Monte Carlo coverage study")
    sp.add_argument("--dgp", choices=("i", "ii", "iii"), default="i")
    sp.add_argument("--n", type=int, default=500)
    sp.add_argument("--reps", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--methods", default=",".join(DEFAULT_METHODS))
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--level", type=_level, default=0.95)
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--deriv", type=int, default=0)
    sp.add_argument("--kernel", type=_kernel, default="epanechnikov")
    sp.add_argument("--rho", type=_rho, default=1.0)
    sp.add_argument("--flavor", choices=("HC0", "HC1", "HC2", "HC3"), default="HC0")
    sp.add_argument("--eval", type=float, default=None)
    sp.add_argument("--sigma", type=float, default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--tsv", default=None, help="also write the per-method table here")
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        # string defaults go through each flag's type conversion
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# -- commands -------------------------------------------------------------------------------


def _config(args, xs) -> tuple[LpConfig, str]:
    if not 0 <= args.deriv <= args.p:
        raise InputError("need 0 <= deriv <= p")
    rho = args.rho
    source = "fixed"
    if rho == "auto":
        side = resolve_boundary(xs, args.eval, pilot_bandwidth(xs, args.p), args.boundary)
        rho = rho_opt_detail(args.kernel, args.p, args.deriv, side, args.nodes)[0]
        source = "auto"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = LpConfig(p=args.p, v=args.deriv, kernel=args.kernel, eval=args.eval,
                       boundary=args.boundary, h=1.0, b=1.0 / rho)
    return cfg, source


def _select(args, xs, ys, cfg) -> BandwidthChoice:
    if not isinstance(args.bw, str):
        return fixed_bandwidth(args.bw, xs.size)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return choose_bandwidth(xs, ys, cfg, args.bw, 1 - args.level, args.weight, args.eta_to)


def _bw_doc(bw: BandwidthChoice) -> dict:
    return {"h": bw.h, "H": bw.H, "eta": bw.eta, "bw_method": bw.method, "weight": bw.weight}


def cmd_ci(args, out) -> None:
    xs, ys = read_dataset(args.data)
    cfg, source = _config(args, xs)
    bw = _select(args, xs, ys, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ci = build_ci(xs, ys, cfg, 1 - args.level, args.method, args.flavor, bw)
    doc = {
        "estimate": ci.center, "se": ci.se, "ci": [ci.lower, ci.upper], "level": ci.level,
        "h": ci.h, "b": ci.b, "rho": ci.h / ci.b, "rho_source": source, "p": cfg.p,
        "deriv": cfg.v, "kernel": cfg.kernel.kind, "method": ci.method, "flavor": ci.flavor,
        "boundary": ci.boundary, "n": int(xs.size), "n_effective": int(ci.n_effective),
        "diagnostics": list(ci.diagnostics),
        **{k: v for k, v in _bw_doc(bw).items() if k != "h"},
    }
    out.write(json.dumps(doc, indent=2) + "\n")


def cmd_bwselect(args, out) -> None:
    xs, ys = read_dataset(args.data)
    cfg, source = _config(args, xs)
    bw = _select(args, xs, ys, cfg)
    doc = {**_bw_doc(bw), "b": bw.h / cfg.rho, "rho": cfg.rho, "rho_source": source,
           "n": bw.n, "p": cfg.p, "deriv": cfg.v, "kernel": cfg.kernel.kind,
           "diagnostics": list(bw.diagnostics)}
    out.write(json.dumps(doc, indent=2) + "\n")


def rho_table_rows(kernels, pmax: int, nodes: int = 64):
    """``(kernel, p, v, boundary, rho*, objective)``; interior rows only for odd ``p - v``,
    since the ratio is unidentified otherwise."""
    rows = []
    for name in kernels:
        kind = get_kernel(name).kind
        for p in range(pmax + 1):
            for v in range(p + 1):
                for side in ("interior", "left"):
                    if side == "interior" and (p - v) % 2 == 0:
                        continue
                    r, obj = rho_opt_detail(kind, p, v, side, nodes)
                    rows.append((kind, p, v, side, r, obj))
    return rows


def cmd_rho_table(args, out) -> None:
    kernels = [k.strip() for k in args.kernels.split(",") if k.strip()]
    for k in kernels:
        if get_kernel(k).kind not in NAMED_KERNELS:
            raise InputError(f"rho-table needs named kernels, got {k!r}")
    if not 0 <= args.pmax <= 4:
        raise InputError("pmax must lie in 0..4")
    out.write("kernel\tp\tv\tboundary\trho_star\tobjective\n")
    for kind, p, v, side, r, obj in rho_table_rows(kernels, args.pmax, args.nodes):
        out.write(f"{kind}\t{p}\t{v}\t{side}\t{r:.5f}\t{_fmt(obj)}\n")


def cmd_kernel_curves(args, out) -> None:
    if not 0 <= args.deriv <= args.p <= 4:
        raise InputError("need 0 <= deriv <= p <= 4")
    rho = args.rho
    if rho == "auto":
        rho = rho_opt_detail(args.kernel, args.p, args.deriv, args.boundary, args.nodes)[0]
    ek = equivalent_kernel(args.kernel, rho, args.p, args.deriv, args.boundary, args.nodes)
    target = k_star(args.p + 1, args.deriv, args.boundary, args.nodes)
    s = ek.support
    u = np.linspace(-s, s, CURVE_POINTS)
    a, b = target(u), ek(u)
    # kernels are supported on the open interval; the closed grid edge is outside it
    a[[0, -1]] = 0.0
    b[[0, -1]] = 0.0
    js = range(args.p + 2)
    out.write(f"# kernel={ek.base.kind} p={args.p} deriv={args.deriv} boundary={args.boundary} "
              f"rho={_fmt(rho)}\n")
    out.write("\t".join(["u", "k_star", "k_rbc"] + [f"m{j}" for j in js]) + "\n")
    for i in range(u.size):
        vals = [u[i], a[i], b[i]] + [b[i] * u[i] ** j for j in js]
        out.write("\t".join(_fmt(float(x)) for x in vals) + "\n")


def cmd_simulate(args, out) -> None:
    if args.reps < 100:
        raise InputError("--reps must be at least 100")
    if args.n < 50:
        raise InputError("--n must be at least 50")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    try:
        rep = run_mc(args.dgp, args.n, args.reps, 1 - args.level, methods, args.seed, args.p,
                     args.deriv, args.kernel, args.rho, args.tau, flavor=args.flavor,
                     workers=args.workers, eval=args.eval, sigma=args.sigma)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out.write(rep.to_json() + "\n")
    if args.tsv:
        with open(args.tsv, "w") as fh:
            fh.write(rep.to_tsv())


COMMANDS = {
    "fit": cmd_ci,
    "ci": cmd_ci,
    "bwselect": cmd_bwselect,
    "rho-table": cmd_rho_table,
    "kernel-curves": cmd_kernel_curves,
    "simulate": cmd_simulate,
}


def _fail(code: int, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}) + "\n")
    return code


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        COMMANDS[args.command](args, out)
    except InputError as exc:
        return _fail(EXIT_INPUT, exc)
    except LpciError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (ValueError, TypeError) as exc:
        return _fail(EXIT_INPUT, exc)
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    return 0


if __name__ == "__main__":
    sys.exit(main())
