"""Command-line interface: ``gvar <command> [options]``.

Reports go to stdout as JSON (or to ``--out``).  Errors print one line
``<code>: <message>`` to stderr and exit 1; a solver that stops before its
tolerance still writes its report and exits 2.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import design as dsg
from .errors import CrossCheckError, DomainError, GvarError, UsageError
from .estimate import estimate_psi, u_stat_oracle
from .io import dumps, read_matrix_csv
from .maxdiv import DEFAULT_MAX_ITER, DEFAULT_TOL, dual_certificate, measure_to_dict, solve_max_div
from .simulate import parse_generator, run_monte_carlo
from .symfun import CovMatrix, psi

EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
ORACLE_RTOL = 1e-8
TABLE_MODELS = {5: 2, 6: 3}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0: {text}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _k_list(text):
    try:
        ks = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k list must hold positive integers")
    return ks


def _interval(text):
    try:
        a, b = (float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"interval must be 'a,b', got {text!r}") from None
    return a, b


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gvar", description="Generalised variance: estimation, maximum diversity, optimal design.")
    p.add_argument("--seed", type=_seed, default=None,
                   help="random seed (default: $GVAR_SEED or 0)")
    p.add_argument("--out", type=Path, default=None, help="write the JSON report here instead of stdout")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("psi", help="Psi_k of a covariance matrix (CSV)")
    c.add_argument("--cov", type=Path, required=True)
    c.add_argument("--k", type=_positive_int, required=True)

    c = sub.add_parser("estimate", help="unbiased estimate of psi_k from a sample (CSV rows)")
    c.add_argument("--sample", type=Path, required=True)
    c.add_argument("--k", type=_positive_int, required=True)
    c.add_argument("--oracle", action="store_true", help="cross-check against the subset average")

    c = sub.add_parser("maxdiv", help="maximum-diversity measure on candidate points (CSV rows)")
    c.add_argument("--candidates", type=Path, required=True)
    c.add_argument("--k", type=_positive_int, required=True)
    c.add_argument("--tol", type=_positive_float, default=DEFAULT_TOL)
    c.add_argument("--max-iter", type=_positive_int, default=DEFAULT_MAX_ITER)

    c = sub.add_parser("design", help="psi~_k-optimal design")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="built-in model, e.g. poly:3")
    src.add_argument("--regressors", type=Path, help="CSV of regressor rows f(t_j)")
    c.add_argument("--interval", type=_interval, default=(-1.0, 1.0))
    c.add_argument("--step", type=_positive_float, default=dsg.DEFAULT_STEP)
    ks = c.add_mutually_exclusive_group(required=True)
    ks.add_argument("--k", type=_positive_int)
    ks.add_argument("--all-k", action="store_true", help="every k = 1..d plus the efficiency matrix")
    c.add_argument("--tol", type=_positive_float, default=1e-9)
    c.add_argument("--max-iter", type=_positive_int, default=1_000_000)
    c.add_argument("--no-polish", action="store_true")

    c = sub.add_parser("simulate", help="Monte-Carlo study of the estimator")
    c.add_argument("--gen", required=True,
                   help="uniform-cube:D | normal:D[:VAR] | uniform-sphere:D[:RHO] | discrete:FILE")
    c.add_argument("--n", type=_positive_int, required=True)
    c.add_argument("--k", type=_k_list, required=True, help="comma-separated list")
    c.add_argument("--reps", type=_positive_int, required=True)
    c.add_argument("--workers", type=_positive_int, default=1)
    c.add_argument("--csv", type=Path, default=None, help="also write tidy rows k,replicate,ratio")
    c.add_argument("--no-ratios", action="store_true", help="omit per-replicate ratios from the JSON")

    c = sub.add_parser("tables", help="efficiency matrix of a polynomial design example")
    c.add_argument("--example", type=int, choices=sorted(TABLE_MODELS), required=True)
    c.add_argument("--step", type=_positive_float, default=dsg.DEFAULT_STEP)
    return p


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("GVAR_SEED")
    return _seed(env) if env else 0


def _cmd_psi(args):
    v = CovMatrix(read_matrix_csv(args.cov))
    p = psi(v, args.k)
    return {"k": args.k, "psi": p.value, "logPsi": p.log_value}, True


def _cmd_estimate(args):
    x = read_matrix_csv(args.sample)
    rep = estimate_psi(x, args.k)
    out = rep.to_dict()
    if args.oracle:
        oracle = u_stat_oracle(x, args.k)
        rel = abs(rep.psi_hat - oracle) / max(abs(oracle), 1e-300)
        out["oracle"] = oracle
        out["oracleRelErr"] = rel
        if rel > ORACLE_RTOL and abs(rep.psi_hat - oracle) > 1e-300:
            raise CrossCheckError(f"estimate disagrees with subset average (relative error {rel:.3g})")
    return out, True


def _cmd_maxdiv(args):
    x = read_matrix_csv(args.candidates)
    mu, report = solve_max_div(x, args.k, tol=args.tol, max_iter=args.max_iter)
    dual = dual_certificate(mu, x, args.k)
    out = measure_to_dict(mu, args.k, report)
    out["dual"] = dual.to_dict()
    return out, report.converged


def _design_space(args):
    if args.model is not None:
        kind, _, deg = args.model.partition(":")
        if kind != "poly" or not deg.isdigit():
            raise DomainError(f"unknown model {args.model!r} (expected poly:DEG)")
        return dsg.polynomial_design_space(int(deg), args.interval, args.step)
    f = read_matrix_csv(args.regressors)
    return dsg.DesignSpace(np.arange(f.shape[0]), f, name=str(args.regressors))


def _table_output(space, table):
    return {
        "model": space.name,
        "ks": table["ks"],
        "designs": [table["reports"][k].to_dict() for k in table["ks"]],
        "efficiency": table["table"],
    }


def _cmd_design(args):
    space = _design_space(args)
    opts = {"tol": args.tol, "max_iter": args.max_iter, "polish": not args.no_polish}
    if args.all_k:
        table = dsg.efficiency_table(space, **opts)
        ok = all(r.converged for r in table["reports"].values())
        return _table_output(space, table), ok
    _, report = dsg.solve_design(space, args.k, **opts)
    out = {"model": space.name, **report.to_dict()}
    return out, report.converged


def _cmd_simulate(args, seed):
    spec = parse_generator(args.gen, seed)
    reports = run_monte_carlo(spec, args.n, args.k, args.reps, workers=args.workers)
    if args.csv is not None:
        lines = ["k,replicate,ratio"]
        for rep in reports:
            lines.extend(f"{k},{r},{x!r}" for k, r, x in rep.csv_rows())
        args.csv.write_text("\n".join(lines) + "\n")
    out = {"generator": spec.to_dict(),
           "reports": [r.to_dict(include_ratios=not args.no_ratios) for r in reports]}
    return out, True


def _cmd_tables(args):
    space = dsg.polynomial_design_space(TABLE_MODELS[args.example], (-1.0, 1.0), args.step)
    table = dsg.efficiency_table(space)
    out = {"example": args.example, **_table_output(space, table)}
    return out, all(r.converged for r in table["reports"].values())


def run(argv=None) -> int:
    """Parse ``argv``, run the command, return the exit code."""
    try:
        args = build_parser().parse_args(argv)
        seed = _resolve_seed(args)
        if args.command == "psi":
            out, ok = _cmd_psi(args)
        elif args.command == "estimate":
            out, ok = _cmd_estimate(args)
        elif args.command == "maxdiv":
            out, ok = _cmd_maxdiv(args)
        elif args.command == "design":
            out, ok = _cmd_design(args)
        elif args.command == "simulate":
            out, ok = _cmd_simulate(args, seed)
        else:
            out, ok = _cmd_tables(args)
        text = dumps(out) + "\n"
        if args.out is not None:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
    except GvarError as exc:
        msg = " ".join(str(exc).split())
        sys.stderr.write(f"{exc.code}: {msg}\n")
        return EXIT_ERROR
    except OSError as exc:
        sys.stderr.write(f"io: {' '.join(str(exc).split())}\n")
        return EXIT_ERROR
    if not ok:
        sys.stderr.write("not-converged: tolerance not reached; report written\n")
        return EXIT_NOT_CONVERGED
    return 0


def main():
    sys.exit(run())
