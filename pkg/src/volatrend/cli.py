"""Command-line front end.

Subcommands: simulate, detrend, fit, sweep, export-demo.  Exit codes:
0 success, 2 validation error, 3 solver non-convergence, 4 I/O error.
The VOLATREND_THREADS environment variable caps worker counts.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__
from .dataio import (
    Dataset,
    DatasetMeta,
    export_results,
    ingest,
    write_csv_long,
    write_f64_grid,
    write_manifest,
)
from .errors import ConvergenceError, ValidationError
from .grid import Field, GridSpec, SolverConfig, negative_log_likelihood
from .linadmm import solve_linearized
from .operators import assemble, penalty_weights
from .simulate import default_model, generate
from .sweep import detrend_dataset, sweep
from .consensus import solve_consensus

__all__ = ["main", "cli_entry"]


def _parse_blocks(text):
    try:
        r, c, t = (int(p) for p in text.lower().split("x"))
    except Exception as exc:
        raise argparse.ArgumentTypeError("blocks must look like RxCxT, 0 = no cut") from exc
    return tuple(None if v == 0 else v for v in (r, c, t))


def _parse_grid(text):
    try:
        return [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("grids are comma-separated numbers") from exc


def _year_boundaries(n_time, steps_per_year):
    if not steps_per_year:
        return ()
    bounds = list(range(0, n_time, steps_per_year))
    if bounds[-1] != n_time:
        bounds.append(n_time)
    return tuple(bounds)


def _add_grid_flags(p):
    p.add_argument("--format", choices=("f64-grid", "csv-long"), default="f64-grid")
    p.add_argument("--wrap", action=argparse.BooleanOptionalAction, default=False,
                   help="join the last column to the first (longitudinal wrap)")
    p.add_argument("--polar", action="store_true", help="pair antipodal top-row cells")
    p.add_argument("--steps-per-year", type=int, default=0)


def _add_solver_flags(p):
    p.add_argument("--solver", choices=("linearized", "consensus"), default="linearized")
    p.add_argument("--lambda-year", type=float, default=0.0)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--blocks", type=_parse_blocks, default=(None, None, None),
                   help="consensus block sizes RxCxT; 0 leaves an axis uncut")
    p.add_argument("--verbose", action="store_true")


def _load(args) -> Dataset:
    ds = ingest(
        getattr(args, "in"),
        fmt=args.format,
        wrap_columns=args.wrap,
        polar_join=args.polar,
    )
    spec = ds.spec
    yb = _year_boundaries(spec.n_time, args.steps_per_year)
    if yb:
        spec = GridSpec(
            n_rows=spec.n_rows,
            n_cols=spec.n_cols,
            n_time=spec.n_time,
            wrap_columns=spec.wrap_columns,
            polar_join=spec.polar_join,
            year_boundaries=yb,
        )
        ds = Dataset(field=Field(spec, ds.values), meta=ds.meta)
    return ds


def _write_dataset(path, field, fmt):
    if fmt == "f64-grid":
        write_f64_grid(path, field)
    else:
        write_csv_long(path, field)


def cmd_simulate(args) -> int:
    model = default_model(n_time=args.n_time, seed=args.seed)
    out = generate(model)
    _write_dataset(args.out, out.y, args.format)
    if args.true_out:
        _write_dataset(args.true_out, out.true_variance, args.format)
    print(f"wrote {args.out} ({model.spec.n_rows}x{model.spec.n_cols}x{model.spec.n_time}, seed {args.seed})")
    return 0


def cmd_detrend(args) -> int:
    ds = _load(args)
    grid = args.lambdas if args.lambdas else None
    residuals, chosen = detrend_dataset(ds, lambda_grid=grid, n_folds=args.cv_folds)
    _write_dataset(args.out, residuals.field, args.format)
    lam_path = args.lambda_out or (str(args.out) + ".lambda.csv")
    with open(lam_path, "w") as fh:
        fh.write("row,col,lambda\n")
        for i in range(ds.spec.n_rows):
            for j in range(ds.spec.n_cols):
                fh.write(f"{i},{j},{chosen[i, j]:.17g}\n")
    print(f"wrote {args.out} and {lam_path}")
    return 0


def _solver_manifest(args, cfg):
    return {
        "solver": args.solver,
        "rho": cfg.rho,
        "mu": cfg.mu if cfg.mu is not None else "auto",
        "epsilon_requested": cfg.epsilon if cfg.epsilon is not None else "auto",
        "max_iter": cfg.max_iter if cfg.max_iter is not None else "auto",
        "lambda_year": cfg.lambda_year,
        "version": __version__,
    }


def cmd_fit(args) -> int:
    ds = _load(args)
    cfg = SolverConfig(
        lambda_t=args.lambda_t,
        lambda_s=args.lambda_s,
        lambda_year=args.lambda_year,
        rho=args.rho,
        mu=args.mu,
        epsilon=args.epsilon,
        max_iter=args.max_iter,
        verbose=args.verbose,
    )
    D, weights = assemble(ds.spec, args.lambda_t, args.lambda_s, args.lambda_year)
    if args.solver == "linearized":
        res = solve_linearized(ds.field, D, weights, cfg)
    else:
        br, bc, bt = args.blocks
        res = solve_consensus(ds.field, D, weights, cfg, block_rows=br, block_cols=bc, block_time=bt)
    if not res.converged:
        print(f"solver did not converge in {res.iterations} iterations", file=sys.stderr)
        return 3
    manifest = _solver_manifest(args, cfg)
    manifest.update(
        {
            "lambda_t": args.lambda_t,
            "lambda_s": args.lambda_s,
            "objective": float(res.objective_trace[-1]),
            "nll": negative_log_likelihood(ds.field, res.h_hat),
        }
    )
    paths = export_results(res, args.out, manifest_extra=manifest)
    print(f"converged in {res.iterations} iterations; wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def cmd_sweep(args) -> int:
    ds = _load(args)
    cfg = SolverConfig(
        lambda_t=0.0,
        lambda_s=0.0,
        lambda_year=args.lambda_year,
        rho=args.rho,
        mu=args.mu,
        epsilon=args.epsilon,
        max_iter=args.max_iter,
        verbose=args.verbose,
    )
    records, best_h, best = sweep(
        ds,
        args.lambda_t_grid,
        args.lambda_s_grid,
        solver=args.solver,
        base_cfg=cfg,
        weighted_criterion=args.weighted_criterion,
        block_dims=args.blocks,
    )
    from pathlib import Path

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep_records.csv", "w") as fh:
        fh.write("lambda_t,lambda_s,objective,nll,penalty_l1,criterion,iterations,wall_seconds,converged\n")
        for r in records:
            fh.write(
                f"{r.lambda_t:.17g},{r.lambda_s:.17g},{r.objective:.17g},{r.nll:.17g},"
                f"{r.penalty_l1:.17g},{r.criterion:.17g},{r.iterations},{r.wall_seconds:.3f},{r.converged}\n"
            )
    if best is None:
        print("no sweep fit converged", file=sys.stderr)
        return 3
    manifest = _solver_manifest(args, cfg)
    manifest.update(
        {
            "lambda_t_grid": ",".join(repr(v) for v in args.lambda_t_grid),
            "lambda_s_grid": ",".join(repr(v) for v in args.lambda_s_grid),
            "best_lambda_t": best.lambda_t,
            "best_lambda_s": best.lambda_s,
            "best_criterion": best.criterion,
            "best_nll": best.nll,
            "best_penalty_l1": best.penalty_l1,
            "weighted_criterion": args.weighted_criterion,
        }
    )
    sd = Field(best_h.spec, np.exp(best_h.values / 2.0))
    write_f64_grid(out_dir / "sd.f64grid", sd)
    write_manifest(out_dir / "manifest.txt", manifest)
    print(
        f"best pair lambda_t={best.lambda_t:g} lambda_s={best.lambda_s:g} "
        f"(criterion {best.criterion:.6g}); wrote {out_dir}"
    )
    return 0


def cmd_export_demo(args) -> int:
    from .grid import SolverResult

    spec = GridSpec(n_rows=2, n_cols=3, n_time=12, year_boundaries=(0, 4, 8, 12))
    h = Field.zeros(spec)
    demo = SolverResult(
        h_hat=h,
        objective_trace=np.array([0.0]),
        primal_residual_trace=np.array([0.0]),
        dual_residual_trace=np.array([0.0]),
        iterations=1,
        converged=True,
        epsilon_used=1e-6,
    )
    paths = export_results(demo, args.out, manifest_extra={"demo": True, "version": __version__})
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volatrend",
        description="Variance-trend estimation for gridded spatio-temporal data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate the synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--true-out", default=None, help="also write the true variance field")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-time", type=int, default=780)
    p.add_argument("--format", choices=("f64-grid", "csv-long"), default="f64-grid")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detrend", help="remove a cross-validated trend per location")
    p.add_argument("--in", required=True)
    _add_grid_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--lambdas", type=_parse_grid, default=None,
                   help="comma-separated trend penalty grid")
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--lambda-out", default=None)
    p.set_defaults(func=cmd_detrend)

    p = sub.add_parser("fit", help="fit one penalty pair and export results")
    p.add_argument("--in", required=True)
    _add_grid_flags(p)
    _add_solver_flags(p)
    p.add_argument("--lambda-t", type=float, required=True)
    p.add_argument("--lambda-s", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="sweep penalty grids with warm starts")
    p.add_argument("--in", required=True)
    _add_grid_flags(p)
    _add_solver_flags(p)
    p.add_argument("--lambda-t-grid", type=_parse_grid, required=True)
    p.add_argument("--lambda-s-grid", type=_parse_grid, required=True)
    p.add_argument("--weighted-criterion", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-demo", help="export a tiny fixed result to show file formats")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


def cli_entry():
    from .parallel import tune_malloc

    tune_malloc()
    sys.exit(main())


if __name__ == "__main__":
    cli_entry()
