"""Command-line harness: ``restricted-gradient <subcommand> ...``.

Exit codes: 0 success (including non-convergence findings), 1 usage or
configuration error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import theory
from .ensembles import EnsembleSpec
from .exceptions import ConfigurationError, NonConvergenceError, NumericError
from .experiments import (Checks, Experiment, SolverOptions, gnuplot_script, load_config,
                          run_experiment, write_json)
from .solvers import IterateTrace

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, rank=False, decomp=False):
    p.add_argument("--d", type=int, default=200, help="dimension (rows for matrices)")
    if decomp:
        p.add_argument("--d2", type=int, default=None, help="number of columns (default d)")
        p.add_argument("--s", type=int, default=None, help="corrupted columns (default ceil(sqrt(d2)))")
    else:
        p.add_argument("--s", type=int, default=None, help="sparsity (default ceil(sqrt(d)))")
    p.add_argument("--rank", type=int, default=5 if (rank or decomp) else None)
    p.add_argument("--q", type=float, default=0.0, help="l_q sparsity parameter in [0, 1]")
    p.add_argument("--R-q", dest="R_q", type=float, default=None, help="l_q radius (q > 0)")
    p.add_argument("--alpha", type=float, default=25.0, help="sample-size order parameter")
    p.add_argument("--n", type=int, default=None, help="sample size (overrides --alpha)")
    p.add_argument("--omega", type=float, default=0.0, help="AR(1) correlation in [0, 1)")
    p.add_argument("--nu", type=float, default=0.5, help="noise standard deviation")
    p.add_argument("--spikiness", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--stop-tol", type=float, default=1e-12)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--step", type=str, default="recommended",
                   help="'recommended', 'auto' or a number (gamma_u)")
    p.add_argument("--cone", action="store_true", help="run cone-inequality checks")
    p.add_argument("--probe", action="store_true", help="fit RSC/RSM constants and audit")
    p.add_argument("--gnuplot-script", type=str, default=None)
    p.add_argument("--save-instance", action="store_true",
                   help="also write each generated instance (npz design, JSON truth and metadata)")


FAMILY_OF = {"lasso": "sparse_linear", "lasso-lag": "sparse_linear", "logistic": "logistic_sparse",
             "matrix-cs": "matrix_cs", "matcomp": "matcomp", "matdecomp": "matdecomp",
             "probe-rsc": "sparse_linear"}


def build_parser():
    p = _Parser(prog="restricted-gradient",
                description="Projected and composite gradient experiments on random M-estimation instances.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    r = sub.add_parser("run", help="run experiments from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="override the config's output directory")
    r.add_argument("--gnuplot-script", default=None)
    for name in ("lasso", "lasso-lag", "logistic", "probe-rsc"):
        _common(sub.add_parser(name, help=f"{name} experiment"))
    lag = sub.choices["lasso-lag"]
    lag.add_argument("--lam", type=str, default=None, help="lambda_n (default 6 sqrt(nu log d / n))")
    _common(sub.add_parser("matrix-cs", help="matrix compressed sensing"), rank=True)
    _common(sub.add_parser("matcomp", help="matrix completion"), rank=True)
    _common(sub.add_parser("matdecomp", help="low-rank plus column-sparse decomposition"), decomp=True)
    f = sub.add_parser("fit-rate", help="fit a geometric rate to a trace CSV")
    f.add_argument("--trace", required=True)
    f.add_argument("--column", default="err_to_opt", choices=("err_to_opt", "err_to_truth"))
    f.add_argument("--floor-guard", type=float, default=3.0)
    return p


def _step_value(raw):
    if raw in ("recommended", "auto"):
        return raw
    try:
        return float(raw)
    except ValueError as exc:
        raise UsageError(f"--step must be 'recommended', 'auto' or a number, got {raw!r}") from exc


def experiment_from_args(args):
    fam = FAMILY_OF[args.command]
    s = args.s
    if fam in ("sparse_linear", "logistic_sparse") and s is None and args.q == 0:
        s = math.ceil(math.sqrt(args.d))
    if fam == "matdecomp" and s is None:
        s = math.ceil(math.sqrt(args.d2 or args.d))
    if fam not in ("sparse_linear", "logistic_sparse", "matdecomp"):
        s = None
    R_q = args.R_q
    if args.q > 0 and R_q is None:
        R_q = float(math.ceil(math.log(args.d) ** 2))
    ens = EnsembleSpec(
        family=fam, d=args.d, s=s if args.q == 0 or fam == "matdecomp" else None, q=args.q,
        R_q=R_q, rank=args.rank,
        d2=getattr(args, "d2", None), n=args.n,
        alpha=None if args.n is not None else args.alpha, omega=args.omega, nu=args.nu,
        spikiness=args.spikiness, seed=args.seed)
    lam = None
    if args.command == "lasso-lag" and args.lam is not None:
        lam = args.lam if args.lam == "dual2" else float(args.lam)
    solver = SolverOptions(
        method="composite" if args.command == "lasso-lag" else "projected",
        step=_step_value(args.step), lam=lam, max_iters=args.max_iters, stop_tol=args.stop_tol,
        record_every=args.record_every)
    checks = Checks(cone=args.cone, probe=args.probe or args.command == "probe-rsc")
    return Experiment(args.command, ens, solver, checks, args.reps,
                      save_instances=args.save_instance)


def _echo_flags(args):
    return {k: v for k, v in vars(args).items() if k != "command"}


def _print_summary(summary):
    fit = summary["averaged_rate"]
    line = {"name": summary["name"], "status": fit["status"], "kappa_hat": fit["kappa"],
            "r2": fit["r2"], "reps": len(summary["reps"]),
            "solver_status": sorted({r["status"] for r in summary["reps"]})}
    print(json.dumps(line))


def cmd_fit_rate(args):
    tr = IterateTrace.from_csv(args.trace)
    fit = theory.fit_geometric_rate(tr.column(args.column), tr.column("t"), args.floor_guard)
    print(json.dumps({"status": fit.status, "kappa_hat": fit.kappa, "r2": fit.r2,
                      "floor": fit.floor, "points": fit.n_points}))
    return EXIT_OK


def cmd_run(args):
    base_out, exps = load_config(args.config)
    base = Path(args.out or base_out)
    curves = []
    for exp in exps:
        out = base / (exp.output_dir or exp.name)
        summary = run_experiment(exp, out)
        _print_summary(summary)
        curves.append(str(out / "curve.csv"))
    if args.gnuplot_script:
        gnuplot_script(curves, args.gnuplot_script)
    return EXIT_OK


def cmd_family(args):
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    exp = experiment_from_args(args)
    out = Path(args.out or Path("rg-out") / args.command)
    summary = run_experiment(exp, out)
    summary["flags"] = _echo_flags(args)
    write_json(out / "summary.json", summary)
    _print_summary(summary)
    if args.gnuplot_script:
        gnuplot_script([str(out / "curve.csv")], args.gnuplot_script)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "fit-rate":
            return cmd_fit_rate(args)
        if args.command == "run":
            return cmd_run(args)
        return cmd_family(args)
    except (UsageError, ConfigurationError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, NonConvergenceError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
