"""Detrending and penalty-sweep orchestration.

The sweep visits (lambda_s, lambda_t) pairs in ascending lexicographic
order, warm-starting every fit from the nearest previously solved pair
with smaller-or-equal penalties (the immediate lambda_t predecessor, or
the lambda_s predecessor at the start of a row).  Pairs are ranked by the
selection heuristic

    L(lambda_t, lambda_s) = nll(h) + ||D h||_1

which trades likelihood against solution complexity; a flag switches the
complexity term to the Lambda-weighted penalty.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .consensus import solve_consensus
from .dataio import Dataset
from .errors import ConvergenceError, ValidationError
from .grid import Field, SolverConfig, negative_log_likelihood
from .linadmm import solve_linearized
from .operators import assemble, operator_norm, penalty_weights
from .parallel import ordered_map
from .trend import cross_validate_trend

__all__ = ["SweepRecord", "sweep", "detrend_dataset"]


@dataclass
class SweepRecord:
    lambda_t: float
    lambda_s: float
    objective: float
    nll: float
    penalty_l1: float
    criterion: float
    iterations: int
    wall_seconds: float
    converged: bool


def _solve(y, D, weights, cfg, solver, op_norm, block_dims, n_workers, warm_state=None):
    if solver == "linearized":
        return solve_linearized(y, D, weights, cfg, op_norm=op_norm, warm_state=warm_state)
    if solver == "consensus":
        br, bc, bt = block_dims or (None, None, None)
        return solve_consensus(
            y, D, weights, cfg, block_rows=br, block_cols=bc, block_time=bt, n_workers=n_workers
        )
    raise ValidationError(f"unknown solver {solver!r}")


def sweep(
    ds: Dataset,
    lambda_t_grid,
    lambda_s_grid,
    solver: str = "linearized",
    base_cfg: SolverConfig | None = None,
    weighted_criterion: bool = False,
    block_dims=None,
    n_workers: int | None = None,
):
    """Fit every penalty pair with warm starts; return records and the
    criterion-minimizing field.

    Grids must be sorted ascending.  Unconverged fits are recorded but
    excluded from the argmin.  Returns (records, best_h, best_record);
    best entries are None when no fit converged.
    """
    lt = [float(v) for v in lambda_t_grid]
    ls = [float(v) for v in lambda_s_grid]
    if not lt or not ls:
        raise ValidationError("sweep grids must be nonempty")
    if lt != sorted(lt) or ls != sorted(ls):
        raise ValidationError("sweep grids must be sorted ascending")

    spec = ds.spec
    y = ds.field
    D, _ = assemble(spec, 1.0, 1.0, 1.0)
    op = operator_norm(D) if solver == "linearized" else None
    base = base_cfg or SolverConfig(lambda_t=0.0, lambda_s=0.0)

    records: list[SweepRecord] = []
    solved: dict[tuple[int, int], tuple] = {}
    best = None
    for i_s, lam_s in enumerate(ls):
        for i_t, lam_t in enumerate(lt):
            # warm start from the nearest previously solved smaller pair:
            # the lambda_t predecessor, else the lambda_s predecessor
            if i_t > 0:
                warm = solved.get((i_s, i_t - 1))
            elif i_s > 0:
                warm = solved.get((i_s - 1, i_t))
            else:
                warm = None
            warm_h, warm_state = warm if warm is not None else (None, None)
            cfg = replace(base, lambda_t=lam_t, lambda_s=lam_s, warm_start=warm_h)
            weights = penalty_weights(spec, lam_t, lam_s, base.lambda_year)
            start = time.perf_counter()
            try:
                res = _solve(y, D, weights, cfg, solver, op, block_dims, n_workers,
                             warm_state=warm_state)
            except ConvergenceError:
                records.append(
                    SweepRecord(lam_t, lam_s, np.nan, np.nan, np.nan, np.nan, 0,
                                time.perf_counter() - start, False)
                )
                continue
            wall = time.perf_counter() - start
            h = res.h_hat
            nll = negative_log_likelihood(y, h)
            Dh_abs = np.abs(D @ h.values)
            penalty = float(weights.weights @ Dh_abs) if weighted_criterion else float(Dh_abs.sum())
            criterion = nll + penalty
            rec = SweepRecord(
                lambda_t=lam_t,
                lambda_s=lam_s,
                objective=nll + float(weights.weights @ Dh_abs),
                nll=nll,
                penalty_l1=penalty,
                criterion=criterion,
                iterations=res.iterations,
                wall_seconds=wall,
                converged=res.converged,
            )
            records.append(rec)
            if res.converged:
                state = (res.z, res.u) if res.z is not None and res.u is not None else None
                solved[(i_s, i_t)] = (h, state)
                if best is None or criterion < best[0].criterion:
                    best = (rec, h)
    if best is None:
        return records, None, None
    return records, best[1], best[0]


def detrend_dataset(
    ds: Dataset,
    lambda_grid=None,
    n_folds: int = 5,
    n_workers: int | None = None,
) -> tuple[Dataset, np.ndarray]:
    """Remove a cross-validated trend from every location's series.

    Returns the residual dataset plus the per-location chosen penalty as
    an (n_rows, n_cols) array.  A failure on any series aborts with the
    location named.
    """
    spec = ds.spec
    cube = ds.field.cube()
    locations = [(i, j) for i in range(spec.n_rows) for j in range(spec.n_cols)]

    def fit(loc):
        i, j = loc
        try:
            return cross_validate_trend(cube[i, j], lambda_grid, n_folds=n_folds)
        except Exception as exc:
            raise ConvergenceError(f"detrending failed at location ({i}, {j}): {exc}") from exc

    fits = ordered_map(fit, locations, n_workers)
    residuals = np.empty_like(cube)
    chosen = np.empty((spec.n_rows, spec.n_cols))
    for (i, j), fit_res in zip(locations, fits):
        residuals[i, j] = fit_res.residuals
        chosen[i, j] = fit_res.lambda_used
    return Dataset(field=Field.from_cube(spec, residuals), meta=ds.meta), chosen
