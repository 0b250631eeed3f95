"""Full-field solver by consensus ADMM over overlapping sub-cubes.

The space-time cube is cut into blocks along any subset of the three axes.
Cut axes are based on disjoint "core" ranges; a block's variable set is
its core extended by the neighbouring slice(s) it needs to keep every
penalty row local: one extra slice upward along each spatial axis
(first-difference stencils span two cells) and one extra slice on both
sides along time (second-difference stencils span three cells).  Shared
cells therefore appear in several blocks; the consensus step averages the
local copies.

Each global penalty row is assigned to exactly one block, the one whose
core owns the row's anchor cell (the middle cell of a second-difference
stencil, the lower cell of a first difference).  Likelihood terms of
shared cells are split evenly across their copies so that the sum of the
block objectives reproduces the global objective exactly.

Rows whose support cannot be made block-local (column wrap with column
cuts, polar joins with any spatial cut, long-horizon rows with time cuts)
raise a construction error: partition the other axes instead.
"""

from __future__ import annotations

import struct
import sys
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, ValidationError
from .grid import Field, GridSpec, SolverConfig, SolverResult, negative_log_likelihood
from .linadmm import default_epsilon
from .operators import PenaltyWeights
from .parallel import ordered_map
from .pdip import PdipConfig, solve_subproblem

__all__ = [
    "SubProblem",
    "ConsensusState",
    "partition",
    "consensus_step",
    "solve_consensus",
    "DEFAULT_MAX_OUTER",
]

DEFAULT_MAX_OUTER = 2000
_MAGIC = b"VSUB1"


@dataclass
class SubProblem:
    """Self-contained local problem for one sub-cube.

    ``cells`` maps local index j to the global flat index of the variable
    it copies; ``overlap`` counts how many blocks share each local cell.
    """

    block_id: int
    cells: np.ndarray
    y_local: np.ndarray
    D_local: sp.csr_array
    lam_local: np.ndarray
    overlap: np.ndarray

    @property
    def n_local(self) -> int:
        return self.cells.size

    def to_bytes(self) -> bytes:
        """Serialize to a self-describing little-endian binary record.

        Layout: magic "VSUB1"; five int64 fields (block_id, n_local,
        n_penalty_rows, nnz, n_global); then arrays in order: cells
        (int64[n_local]), overlap (int64[n_local]), y_local
        (float64[n_local]), lam_local (float64[n_rows]), CSR indptr
        (int64[n_rows+1]), CSR column indices (int64[nnz]), CSR values
        (float64[nnz]).
        """
        D = sp.csr_array(self.D_local)
        head = struct.pack(
            "<5q", self.block_id, self.n_local, D.shape[0], D.nnz, int(D.shape[1])
        )
        parts = [
            _MAGIC,
            head,
            np.asarray(self.cells, dtype="<i8").tobytes(),
            np.asarray(self.overlap, dtype="<i8").tobytes(),
            np.asarray(self.y_local, dtype="<f8").tobytes(),
            np.asarray(self.lam_local, dtype="<f8").tobytes(),
            np.asarray(D.indptr, dtype="<i8").tobytes(),
            np.asarray(D.indices, dtype="<i8").tobytes(),
            np.asarray(D.data, dtype="<f8").tobytes(),
        ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SubProblem":
        if raw[: len(_MAGIC)] != _MAGIC:
            raise ValidationError("not a sub-problem record (bad magic)")
        off = len(_MAGIC)
        block_id, n_local, n_rows, nnz, n_cols = struct.unpack_from("<5q", raw, off)
        off += 5 * 8

        def take(dtype, count):
            nonlocal off
            arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
            off += arr.nbytes
            return arr

        cells = take("<i8", n_local)
        overlap = take("<i8", n_local)
        y_local = take("<f8", n_local)
        lam_local = take("<f8", n_rows)
        indptr = take("<i8", n_rows + 1)
        indices = take("<i8", nnz)
        data = take("<f8", nnz)
        D = sp.csr_array((data, indices, indptr), shape=(n_rows, n_cols))
        return cls(
            block_id=int(block_id),
            cells=cells,
            y_local=y_local,
            D_local=D,
            lam_local=lam_local,
            overlap=overlap,
        )


@dataclass
class ConsensusState:
    """Mutable outer-iteration state: global field, local copies, duals."""

    h: np.ndarray
    x: list
    u: list
    counts: np.ndarray


def _axis_cores(n: int, size: int | None) -> list[tuple[int, int]]:
    if size is None or size >= n:
        return [(0, n)]
    if size < 2:
        raise ValidationError("block dimensions must be at least 2")
    starts = list(range(0, n, size))
    if len(starts) > 1 and n - starts[-1] < 2:  # merge an undersized tail core
        starts.pop()
    return [(s, e) for s, e in zip(starts, starts[1:] + [n])]


def _row_anchors(D) -> np.ndarray:
    """Anchor cell of each penalty row: the middle column of a (1,-2,1)
    stencil, otherwise the lowest-index support cell."""
    D = sp.csr_array(D)
    indptr, indices, data = D.indptr, D.indices, D.data
    nnz = np.diff(indptr)
    if np.any(nnz == 0):
        raise ValidationError("penalty operator has empty rows")
    anchors = indices[indptr[:-1]].astype(np.int64)
    rows3 = np.flatnonzero(nnz == 3)
    if rows3.size:
        starts = indptr[rows3]
        stencil = (data[starts] == 1.0) & (data[starts + 1] == -2.0) & (data[starts + 2] == 1.0)
        mid = rows3[stencil]
        anchors[mid] = indices[indptr[mid] + 1]
    return anchors


def partition(
    spec: GridSpec,
    y: Field,
    D,
    weights: PenaltyWeights,
    block_rows: int | None = None,
    block_cols: int | None = None,
    block_time: int | None = None,
) -> list[SubProblem]:
    """Cut the cube into overlapping sub-problems covering data and rows.

    Block sizes larger than the cube collapse to a single block.  Raises
    a validation error if some penalty row cannot be kept local to the
    block owning its anchor (see the module docstring).
    """
    n_r, n_c, T = spec.n_rows, spec.n_cols, spec.n_time
    row_cores = _axis_cores(n_r, block_rows)
    col_cores = _axis_cores(n_c, block_cols)
    time_cores = _axis_cores(T, block_time)

    cells_per_block = []
    for rs, re in row_cores:
        for cs, ce in col_cores:
            for ts, te in time_cores:
                ii = np.arange(rs, min(re, n_r - 1) + 1)
                jj = np.arange(cs, min(ce, n_c - 1) + 1)
                tt = np.arange(max(ts - 1, 0), min(te, T - 1) + 1)
                cells = (
                    ((ii[:, None] * n_c + jj[None, :])[:, :, None] * T + tt[None, None, :])
                ).reshape(-1)
                cells_per_block.append(cells)

    counts = np.zeros(spec.size, dtype=np.int64)
    for cells in cells_per_block:
        counts[cells] += 1
    if np.any(counts < 1):
        raise ValidationError("partition does not cover the cube")

    # assign each penalty row to the block whose core owns its anchor cell
    anchors = _row_anchors(D)
    at = anchors % T
    loc = anchors // T
    aj = loc % n_c
    ai = loc // n_c
    r_starts = np.array([c[0] for c in row_cores])
    c_starts = np.array([c[0] for c in col_cores])
    t_starts = np.array([c[0] for c in time_cores])
    bi = np.searchsorted(r_starts, ai, side="right") - 1
    bj = np.searchsorted(c_starts, aj, side="right") - 1
    bt = np.searchsorted(t_starts, at, side="right") - 1
    row_block = (bi * len(col_cores) + bj) * len(time_cores) + bt

    D = sp.csr_array(D)
    lam = weights.weights
    blocks = []
    for b, cells in enumerate(cells_per_block):
        rows = np.flatnonzero(row_block == b)
        sub = sp.coo_array(D[rows]) if rows.size else sp.coo_array((0, D.shape[1]))
        local_col = np.searchsorted(cells, sub.col)
        ok = (local_col < cells.size) & (cells[np.minimum(local_col, cells.size - 1)] == sub.col)
        if not np.all(ok):
            raise ValidationError(
                "penalty rows span cells outside their block; do not partition "
                "columns under wrap/polar constraints or time under the "
                "long-horizon penalty"
            )
        D_local = sp.csr_array(
            (sub.data, (sub.row, local_col)), shape=(rows.size, cells.size)
        )
        D_local.sort_indices()
        blocks.append(
            SubProblem(
                block_id=b,
                cells=cells,
                y_local=y.values[cells],
                D_local=D_local,
                lam_local=lam[rows],
                overlap=counts[cells],
            )
        )
    assigned = sum(b.D_local.shape[0] for b in blocks)
    if assigned != D.shape[0]:
        raise ValidationError("penalty rows lost during partitioning")
    return blocks


def consensus_step(state: ConsensusState, blocks: list[SubProblem]) -> np.ndarray:
    """Average the local copies of every global variable."""
    total = np.zeros_like(state.h)
    for block, x in zip(blocks, state.x):
        total[block.cells] += x
    return total / state.counts


def _default_block_dims(spec: GridSpec):
    # small grids cut along time; large grids cut spatially, keeping the
    # local interior-point problems around 10^4 variables
    if spec.n_cells <= 256:
        return None, None, 100
    return 16, 16, None


def solve_consensus(
    y: Field,
    D,
    weights: PenaltyWeights,
    cfg: SolverConfig,
    blocks: list[SubProblem] | None = None,
    block_rows: int | None = None,
    block_cols: int | None = None,
    block_time: int | None = None,
    n_workers: int | None = None,
    trace_stream=None,
) -> SolverResult:
    """Run consensus ADMM: local interior-point solves, overlap averaging,
    dual ascent.

    Stops when max(||h_new - h_old||, ||x - h_new||) falls below epsilon
    (default 0.001% of the data mean square).  Local solves are inexact:
    their duality-gap tolerance tracks 1% of the previous consensus
    residual down to a 1e-6 floor, and each block's dual variable warm
    starts the next outer iteration.
    """
    spec = y.spec
    lam = weights.weights
    if D.shape[0] != lam.size or D.shape[1] != spec.size:
        raise ValidationError("operator, weights and field dimensions disagree")
    if blocks is None:
        if block_rows is None and block_cols is None and block_time is None:
            block_rows, block_cols, block_time = _default_block_dims(spec)
        blocks = partition(spec, y, D, weights, block_rows, block_cols, block_time)

    counts = np.zeros(spec.size, dtype=np.int64)
    for b in blocks:
        counts[b.cells] += 1
    if np.any(counts < 1):
        raise ValidationError("blocks do not cover the cube")

    eps = default_epsilon(y) if cfg.epsilon is None else cfg.epsilon
    max_iter = DEFAULT_MAX_OUTER if cfg.max_iter is None else cfg.max_iter
    if cfg.warm_start is not None:
        h = cfg.warm_start.values.copy()
    else:
        h = np.zeros(spec.size)
    state = ConsensusState(
        h=h,
        x=[None] * len(blocks),
        u=[np.zeros(b.n_local) for b in blocks],
        counts=counts,
    )
    nus = [None] * len(blocks)

    stream = trace_stream if trace_stream is not None else sys.stderr
    obj_trace, primal_trace, dual_trace = [], [], []
    res_prev = np.inf
    converged = False
    it = 0
    # Inexact local solves: their error feeds straight into the consensus
    # residual, so the solution error is kept at ~10% of the previous
    # residual.  The duality gap is quadratic in solution error (strong
    # convexity rho), hence the squared scaling; the floors reflect what
    # the interior-point sub-solver can reach in double precision.
    gap_floor = max(0.005 * cfg.rho * eps**2, 1e-10)
    resid_floor = max(0.01 * eps, 1e-9)
    for it in range(1, max_iter + 1):
        target = 0.1 * min(res_prev, 10.0)
        inner_cfg = PdipConfig(
            tol_gap=max(0.5 * cfg.rho * target**2, gap_floor),
            tol_resid=max(0.1 * target, resid_floor),
        )

        def local_solve(i, _it=it, _cfg=inner_cfg):
            block = blocks[i]
            try:
                return solve_subproblem(
                    block, state.h[block.cells], state.u[i], cfg.rho, _cfg, nu0=nus[i]
                )
            except ConvergenceError as exc:
                best = exc.result
                # a capped sub-solve near its tolerance is still a valid
                # inexact update; only a genuinely failed one is fatal
                if best is not None and np.isfinite(best.gap) and best.gap <= 1e3 * _cfg.tol_gap:
                    return best.x, best.nu
                raise ConvergenceError(
                    f"sub-solver failed on block {i} at outer iteration {_it}: {exc}"
                ) from exc

        results = ordered_map(local_solve, range(len(blocks)), n_workers)
        for i, (x_i, nu_i) in enumerate(results):
            state.x[i] = x_i
            nus[i] = nu_i

        h_old = state.h
        state.h = consensus_step(state, blocks)

        res_x_sq = 0.0
        for i, block in enumerate(blocks):
            diff = state.x[i] - state.h[block.cells]
            state.u[i] = state.u[i] + diff
            res_x_sq += float(diff @ diff)
        res_x = float(np.sqrt(res_x_sq))
        res_h = float(np.linalg.norm(state.h - h_old))

        h_field = Field(spec, state.h)
        obj = negative_log_likelihood(y, h_field) + float(lam @ np.abs(D @ state.h))
        obj_trace.append(obj)
        primal_trace.append(res_x)
        dual_trace.append(res_h)
        if cfg.verbose:
            stream.write(f"{it} {obj!r} {res_x!r} {res_h!r}\n")
        if not np.isfinite(obj):
            raise ConvergenceError(f"iterates diverged at outer iteration {it}")
        if max(res_x, res_h) < eps:
            converged = True
            break
        res_prev = max(res_x, res_h)

    return SolverResult(
        h_hat=Field(spec, state.h),
        objective_trace=np.asarray(obj_trace),
        primal_residual_trace=np.asarray(primal_trace),
        dual_residual_trace=np.asarray(dual_trace),
        iterations=it,
        converged=converged,
        epsilon_used=eps,
    )
