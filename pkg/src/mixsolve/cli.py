"""Command-line front end.

Subcommands::

    mixsolve simulate --n 1000 --seed 1 --out data.tsv
    mixsolve build    --data data.tsv --m 20 --out L.bin
    mixsolve solve    --data data.tsv --m 20 --solver sqp --trace-out trace.csv
    mixsolve race     --data data.tsv --m 100 --solvers sqp em pgd --out race.csv
    mixsolve bench    --n 1000 10000 --m 20 --solvers sqp em --repeats 2 --out bench.csv

Only results go to stdout; log messages go to stderr. Exit codes: 0 on
success (including solver runs that stop without converging), 2 for usage
errors, 3 for input/output errors and 4 for anything unexpected.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import lowrank, problem
from .baselines import FirstOrderConfig, mixem, mixpgd
from .problem import InvalidInputError
from .simulate import SimulationSpec, simulate_observations
from .sqp import PHASES, SqpConfig, mixsqp

SCHEMA = "mixsolve/1"
SOLVERS = ("sqp", "sqp-dense", "em", "pgd")
TRACE_COLUMNS = ("iter", "objective", "objective_times_n", "dual_residual", "nnz", "alpha",
                 "elapsed_s")
BENCH_COLUMNS = ("n", "m", "solver", "repeat", "seed", "factor_rank", "status", "iterations",
                 "objective", "objective_times_n", "dual_residual", "nnz",
                 "t_factorization", "t_derivatives", "t_subproblem", "t_line_search",
                 "total_s")
SWEEP_COLUMNS = ("n", "m", "rank", "reconstruction_error", "l1_gap", "objective_gap",
                 "status", "iterations", "total_s")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("mixsolve")


class UsageError(Exception):
    pass


# -- problem assembly -----------------------------------------------------------

def _load_matrix(args):
    """Likelihood matrix from --data (observations or matrix file) or --n/--seed."""
    data = getattr(args, "data", None)
    if data is None:
        if getattr(args, "n", None) is None:
            raise UsageError("either --data or --n is required")
        obs = simulate_observations(SimulationSpec(args.n, args.seed))
        return _matrix_from_obs(obs, args)
    path = Path(data)
    fmt = getattr(args, "data_format", "auto")
    if fmt == "auto":
        if problem.is_binary_matrix(path):
            fmt = "matrix-binary"
        else:
            fmt = "observations"
    if fmt == "matrix-binary":
        return problem.read_matrix_binary(path)
    if fmt == "matrix-csv":
        return problem.read_matrix_csv(path)
    obs = problem.read_observations(path, _col(args.effect_col), _col(args.se_col))
    return _matrix_from_obs(obs, args)


def _col(spec):
    if spec is None:
        return None
    return int(spec) if spec.isdigit() else spec


def _matrix_from_obs(obs, args):
    if args.m is None:
        raise UsageError("--m is required when building the matrix from observations")
    grid = problem.select_grid(obs, args.m, args.grid_max_sigma)
    return problem.build_likelihood_matrix(obs, grid)


def _run_solver(L, solver, args):
    if solver in ("sqp", "sqp-dense"):
        cfg = SqpConfig(use_lowrank=solver == "sqp" and not args.dense,
                        rtol_qr=args.rtol_qr, rank=args.rank, eps_dual=args.eps_dual,
                        delta=args.delta,
                        max_iter=1000 if args.max_iter is None else args.max_iter)
        return mixsqp(L, cfg)
    cfg = FirstOrderConfig(max_iter=1000 if args.max_iter is None else args.max_iter)
    return mixem(L, cfg) if solver == "em" else mixpgd(L, cfg)


def _config_echo(args, solver):
    keys = ("rtol_qr", "rank", "eps_dual", "delta", "max_iter", "dense", "grid_max_sigma")
    echo = {k: getattr(args, k, None) for k in keys}
    echo["solver"] = solver
    return echo


def build_report(L, result, args, timing=True):
    n, m = L.values.shape
    log_scale = float(np.mean(L.log_row_scale))
    timings = {k: (result.timings.get(k, 0.0) if timing else 0.0) for k in PHASES}
    return {
        "schema": SCHEMA,
        "solver": result.solver,
        "n": n,
        "m": m,
        "factor_rank": result.factor_rank,
        "status": result.status,
        "objective": result.objective,
        "objective_times_n": result.objective * n,
        # log-likelihood of the unscaled densities
        "log_likelihood": -n * (result.objective - log_scale),
        "dual_residual": result.dual_residual,
        "nnz": result.nnz,
        "iterations": result.n_iter,
        "pre_normalization_sum": result.pre_normalization_sum,
        "x": result.x.tolist(),
        "sigma": None if L.sigma is None else L.sigma.tolist(),
        "timings": timings,
        "total_time": result.total_time if timing else 0.0,
        "config": _config_echo(args, result.solver),
    }


def _trace_rows(result, n, timing=True):
    for rec in result.trace:
        yield {"iter": rec.iter, "objective": float(rec.loss),
               "objective_times_n": float(rec.loss) * n, "dual_residual": rec.dual_residual,
               "nnz": rec.nnz, "alpha": rec.alpha,
               "elapsed_s": rec.wall_time if timing else 0.0}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _write_csv(rows, columns, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    if path is None or path == "-":
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).write_text(buf.getvalue())


# -- subcommands ----------------------------------------------------------------

def cmd_simulate(args):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    obs = simulate_observations(SimulationSpec(args.n, args.seed))
    if args.out in (None, "-"):
        buf = io.StringIO()
        buf.write("b\tSE\n")
        for z, s in zip(obs.z, obs.s):
            buf.write(f"{z:.17g}\t{s:.17g}\n")
        sys.stdout.write(buf.getvalue())
    else:
        problem.write_observations(obs, args.out)
        print(f"{len(obs.z)} rows written to {args.out}")
    return EXIT_OK


def cmd_build(args):
    L = _load_matrix(args)
    if args.format == "csv":
        problem.write_matrix_csv(L, args.out)
    else:
        problem.write_matrix_binary(L, args.out)
    n, m = L.values.shape
    print(json.dumps({"schema": SCHEMA, "n": n, "m": m, "out": str(args.out),
                      "format": args.format}))
    return EXIT_OK


def cmd_solve(args):
    L = _load_matrix(args)
    n = L.values.shape[0]
    log.info("solving n=%d m=%d with %s", n, L.values.shape[1], args.solver)
    result = _run_solver(L, args.solver, args)
    timing = not args.no_timing
    report = build_report(L, result, args, timing)
    if args.trace_out:
        _write_csv(_trace_rows(result, n, timing), TRACE_COLUMNS, args.trace_out)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if result.status != "converged":
        log.warning("%s stopped with status %s", result.solver, result.status)
    return EXIT_OK


def cmd_race(args):
    """Run several solvers on one problem and emit their traces side by side.

    ``gap_times_n`` is each trace point's distance, in log-likelihood units,
    to the best objective reached by any solver.
    """
    L = _load_matrix(args)
    n = L.values.shape[0]
    timing = not args.no_timing
    rows = []
    for solver in args.solvers:
        log.info("race: running %s", solver)
        result = _run_solver(L, solver, args)
        for row in _trace_rows(result, n, timing):
            row["solver"] = solver
            rows.append(row)
    best = min(r["objective"] for r in rows) if rows else 0.0
    for r in rows:
        r["gap_times_n"] = (r["objective"] - best) * n
    _write_csv(rows, ("solver",) + TRACE_COLUMNS + ("gap_times_n",), args.out)
    return EXIT_OK


def _bench_cell(job):
    n, m, solver, rep, seed, args, timing = job
    obs = simulate_observations(SimulationSpec(n, seed))
    L = problem.build_likelihood_matrix(obs, problem.select_grid(obs, m, args.grid_max_sigma))
    result = _run_solver(L, solver, args)
    row = {"n": n, "m": m, "solver": solver, "repeat": rep, "seed": seed,
           "factor_rank": result.factor_rank, "status": result.status,
           "iterations": result.n_iter, "objective": result.objective,
           "objective_times_n": result.objective * n, "dual_residual": result.dual_residual,
           "nnz": result.nnz, "total_s": result.total_time if timing else 0.0}
    for k in PHASES:
        row[f"t_{k}"] = result.timings.get(k, 0.0) if timing else 0.0
    return row


def _aggregate(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["n"], r["m"], r["solver"]), []).append(r)
    out = []
    numeric = [c for c in BENCH_COLUMNS
               if c not in ("n", "m", "solver", "repeat", "seed", "status")]
    for (n, m, solver), grp in groups.items():
        agg = {"n": n, "m": m, "solver": solver, "repeats": len(grp),
               "converged": sum(r["status"] == "converged" for r in grp)}
        for c in numeric:
            agg[c] = float(np.mean([r[c] for r in grp]))
        out.append(agg)
    return out


def _rank_sweep(args, timing):
    n, m = args.n[0], args.m[0]
    obs = simulate_observations(SimulationSpec(n, args.seed))
    L = problem.build_likelihood_matrix(obs, problem.select_grid(obs, m, args.grid_max_sigma))
    A = L.values
    norm_a = np.linalg.norm(A)
    base = SqpConfig(eps_dual=args.eps_dual, delta=args.delta,
                     max_iter=1000 if args.max_iter is None else args.max_iter)
    dense = mixsqp(L, replace(base, use_lowrank=False))
    lo, hi = args.rank_sweep
    ranks = list(range(lo, hi + 1)) + [None]
    rows = []
    for r in ranks:
        F = lowrank.rrqr(A, rtol=args.rtol_qr, rank=r)
        res = mixsqp(L, replace(base, rtol_qr=args.rtol_qr, rank=r))
        rows.append({"n": n, "m": m, "rank": "adaptive" if r is None else r,
                     "reconstruction_error": float(np.linalg.norm(A - F.reconstruct()) / norm_a),
                     "l1_gap": float(np.abs(res.x - dense.x).sum()),
                     "objective_gap": res.objective - dense.objective,
                     "status": res.status, "iterations": res.n_iter,
                     "total_s": res.total_time if timing else 0.0})
    return rows


def cmd_bench(args):
    timing = not args.no_timing and args.jobs == 1
    if args.rank_sweep:
        if len(args.n) != 1 or len(args.m) != 1:
            raise UsageError("--rank-sweep needs exactly one --n and one --m")
        _write_csv(_rank_sweep(args, timing), SWEEP_COLUMNS, args.out)
        return EXIT_OK
    cap = args.mem_cap_mb * 2**20
    jobs = []
    for n in args.n:
        for m in args.m:
            if n * m * 8 > cap:
                log.warning("skipping n=%d m=%d: matrix needs %.3g MB, cap is %g MB",
                            n, m, n * m * 8 / 2**20, args.mem_cap_mb)
                continue
            for solver in args.solvers:
                for rep in range(args.repeats):
                    jobs.append((n, m, solver, rep, args.seed + rep, args, timing))
    if args.jobs > 1:
        log.info("running %d cells on %d workers; timing columns are zeroed", len(jobs),
                 args.jobs)
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_bench_cell, jobs))
    else:
        rows = []
        for job in jobs:
            log.info("bench cell n=%d m=%d solver=%s repeat=%d", *job[:4])
            rows.append(_bench_cell(job))
    _write_csv(rows, BENCH_COLUMNS, args.out)
    if args.aggregate_out:
        agg = _aggregate(rows)
        cols = ("n", "m", "solver", "repeats", "converged") + tuple(
            c for c in BENCH_COLUMNS if c not in ("n", "m", "solver", "repeat", "seed", "status"))
        _write_csv(agg, cols, args.aggregate_out)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_problem_args(p, allow_sim=True):
    p.add_argument("--data", help="observations TSV/CSV, or a likelihood matrix file")
    p.add_argument("--data-format", default="auto",
                   choices=("auto", "observations", "matrix-csv", "matrix-binary"))
    p.add_argument("--effect-col", help="effect column name or 0-based index (default b)")
    p.add_argument("--se-col", help="standard-error column name or 0-based index (default SE)")
    p.add_argument("--m", type=int, help="grid size when building from observations")
    p.add_argument("--grid-max-sigma", type=float, help="override the largest grid sigma")
    if allow_sim:
        p.add_argument("--n", type=_positive_int, help="simulate n observations instead of --data")
        p.add_argument("--seed", type=int, default=1)


def _add_solver_args(p):
    p.add_argument("--rtol-qr", type=float, default=1e-10)
    p.add_argument("--dense", action="store_true", help="disable the low-rank approximation")
    p.add_argument("--rank", type=_positive_int, help="force a fixed QR rank")
    p.add_argument("--eps-dual", type=float, default=1e-8)
    p.add_argument("--delta", type=float, help="constant added inside the logarithms")
    p.add_argument("--max-iter", type=_positive_int)
    p.add_argument("--no-timing", action="store_true",
                   help="write zeros for all timings so output is reproducible byte for byte")


def make_parser():
    parser = argparse.ArgumentParser(prog="mixsolve",
                                     description="Maximum-likelihood mixture proportions.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write simulated observations as TSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("build", help="build and export a likelihood matrix")
    _add_problem_args(p)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("solve", help="run one solver and print a JSON report")
    _add_problem_args(p)
    _add_solver_args(p)
    p.add_argument("--solver", choices=SOLVERS, default="sqp")
    p.add_argument("--trace-out", help="per-iteration trace CSV")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("race", help="run several solvers and emit their traces")
    _add_problem_args(p)
    _add_solver_args(p)
    p.add_argument("--solvers", nargs="+", choices=SOLVERS, default=["sqp", "em", "pgd"])
    p.add_argument("--out", help="trace table path (default stdout)")
    p.set_defaults(func=cmd_race)

    p = sub.add_parser("bench", help="benchmark table over simulated problems")
    p.add_argument("--n", type=_positive_int, nargs="+", required=True)
    p.add_argument("--m", type=int, nargs="+", required=True)
    p.add_argument("--solvers", nargs="+", choices=SOLVERS, default=["sqp"])
    p.add_argument("--repeats", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--grid-max-sigma", type=float)
    _add_solver_args(p)
    p.add_argument("--mem-cap-mb", type=float, default=4096.0)
    p.add_argument("--jobs", type=_positive_int, default=1,
                   help="parallel workers; more than one zeroes the timing columns")
    p.add_argument("--rank-sweep", type=int, nargs=2, metavar=("LO", "HI"),
                   help="solve with every forced QR rank in [LO, HI] and compare to dense")
    p.add_argument("--aggregate-out", help="also write means over repeats here")
    p.add_argument("--out", help="table path (default stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except BrokenPipeError:
        # downstream reader (e.g. head) went away; nothing left to report
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_OK
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"mixsolve: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInputError, OSError) as err:
        print(f"mixsolve: error: {err}", file=sys.stderr)
        return EXIT_IO
    except Exception as err:  # noqa: BLE001 - report anything else as internal
        log.debug("internal error", exc_info=True)
        print(f"mixsolve: internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INTERNAL
    log.info("done in %.3f s", time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
