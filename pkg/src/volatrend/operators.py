"""Sparse penalty operators for temporal and spatial smoothness.

The stacked operator D maps a flat field h to penalty differences:

* temporal rows apply the second-difference stencil (1, -2, 1) along each
  location's time series,
* spatial rows apply (1, -1) to vertically and horizontally adjacent cells
  at each time step (plus column-wrap and polar rows when enabled),
* long-horizon rows apply (1, -2, 1) to the within-year sums of h at each
  location.

All operators are scipy CSR matrices; row ordering is documented per
builder and matches the stacking order of :func:`assemble`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import PowerIterationError, ValidationError
from .grid import GridSpec

__all__ = [
    "PenaltyWeights",
    "build_temporal",
    "build_spatial",
    "build_longhorizon",
    "penalty_counts",
    "penalty_weights",
    "assemble",
    "operator_norm",
    "dump_triplets",
]


@dataclass(frozen=True)
class PenaltyWeights:
    """Per-row weights for a stacked penalty operator.

    The first ``n_temporal`` entries carry the temporal weight, the next
    ``n_spatial`` the spatial weight, and the remaining ``n_longhorizon``
    the long-horizon weight.
    """

    weights: np.ndarray
    n_temporal: int
    n_spatial: int
    n_longhorizon: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if np.any(w < 0):
            raise ValidationError("penalty weights must be nonnegative")
        if w.size != self.n_temporal + self.n_spatial + self.n_longhorizon:
            raise ValidationError("weight vector length does not match row counts")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def _csr(rows, cols, vals, shape):
    mat = sp.csr_array(
        (np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))),
        shape=shape,
    )
    mat.sort_indices()
    return mat


def build_temporal(spec: GridSpec) -> sp.csr_array:
    """Second-difference rows along time, one block per location.

    Rows are ordered location-major (C order over (i, j)), interior time
    step ascending within each location: S*(T-2) rows in total.
    """
    if spec.n_time < 3:
        raise ValidationError("temporal differences need n_time >= 3")
    T, S = spec.n_time, spec.n_cells
    n_rows = S * (T - 2)
    loc = np.repeat(np.arange(S), T - 2)
    t = np.tile(np.arange(1, T - 1), S)
    center = loc * T + t
    rows = np.repeat(np.arange(n_rows), 3)
    cols = np.stack([center - 1, center, center + 1], axis=1).reshape(-1)
    vals = np.tile([1.0, -2.0, 1.0], n_rows)
    return _csr(rows, cols, vals, (n_rows, spec.size))


def build_spatial(spec: GridSpec) -> sp.csr_array:
    """First-difference rows between adjacent cells at every time step.

    Row order: all vertical pairs (cell minus the cell one row below),
    then horizontal pairs (cell minus the cell one column right), then
    column-wrap pairs (last column minus column 0) when ``wrap_columns``,
    then polar pairs when ``polar_join``.  Within each group, pairs are
    C-ordered over locations with time fastest.  Each row is +1 on the
    first cell of the pair and -1 on the second.
    """
    T = spec.n_time
    n_r, n_c = spec.n_rows, spec.n_cols
    blocks = []

    def pair_block(loc_a, loc_b):
        # one (+1, -1) row per (pair, t); pair-major, time fastest
        n_pairs = loc_a.size
        if n_pairs == 0:
            return None
        t = np.tile(np.arange(T), n_pairs)
        a = np.repeat(loc_a, T) * T + t
        b = np.repeat(loc_b, T) * T + t
        m = n_pairs * T
        rows = np.repeat(np.arange(m), 2)
        cols = np.stack([a, b], axis=1).reshape(-1)
        vals = np.tile([1.0, -1.0], m)
        return _csr(rows, cols, vals, (m, spec.size))

    ii, jj = np.meshgrid(np.arange(n_r - 1), np.arange(n_c), indexing="ij")
    blocks.append(pair_block((ii * n_c + jj).ravel(), ((ii + 1) * n_c + jj).ravel()))

    ii, jj = np.meshgrid(np.arange(n_r), np.arange(n_c - 1), indexing="ij")
    blocks.append(pair_block((ii * n_c + jj).ravel(), (ii * n_c + jj + 1).ravel()))

    if spec.wrap_columns:
        i = np.arange(n_r)
        blocks.append(pair_block(i * n_c + (n_c - 1), i * n_c))

    if spec.polar_join:
        if n_c % 2:
            raise ValidationError("polar_join requires an even number of columns")
        # pair each top-row cell with its antipode, one row per unordered pair
        j = np.arange(n_c // 2)
        blocks.append(pair_block(j, j + n_c // 2))

    blocks = [b for b in blocks if b is not None]
    if not blocks:
        return sp.csr_array((0, spec.size))
    return sp.csr_array(sp.vstack(blocks, format="csr"))


def build_longhorizon(spec: GridSpec) -> sp.csr_array:
    """Second-difference rows over within-year sums of h per location.

    The row for (location, interior year k) has +1 on every time step of
    year k-1, -2 on year k, and +1 on year k+1, all at that location.
    Rows are ordered location-major, interior year ascending.  With fewer
    than three years the matrix has zero rows.
    """
    T, S = spec.n_time, spec.n_cells
    n_years = spec.n_years
    if n_years < 3:
        return sp.csr_array((0, spec.size))
    slices = spec.year_slices()
    rows, cols, vals = [], [], []
    r = 0
    for loc in range(S):
        base = loc * T
        for k in range(1, n_years - 1):
            for sl, coef in ((slices[k - 1], 1.0), (slices[k], -2.0), (slices[k + 1], 1.0)):
                ts = np.arange(sl.start, sl.stop)
                rows.append(np.full(ts.size, r))
                cols.append(base + ts)
                vals.append(np.full(ts.size, coef))
            r += 1
    return _csr(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (r, spec.size))


def penalty_counts(spec: GridSpec) -> tuple[int, int, int]:
    """Row counts (temporal, spatial, longhorizon) for a given grid."""
    T, n_r, n_c = spec.n_time, spec.n_rows, spec.n_cols
    n_t = spec.n_cells * (T - 2)
    n_s = T * ((n_r - 1) * n_c + n_r * (n_c - 1))
    if spec.wrap_columns:
        n_s += T * n_r
    if spec.polar_join:
        n_s += T * (n_c // 2)
    n_y = spec.n_cells * max(spec.n_years - 2, 0)
    return n_t, n_s, n_y


def penalty_weights(
    spec: GridSpec, lambda_t: float, lambda_s: float, lambda_year: float = 0.0
) -> PenaltyWeights:
    """Weight vector matching the stacking order of :func:`assemble`."""
    n_t, n_s, n_y = penalty_counts(spec)
    w = np.concatenate(
        [np.full(n_t, float(lambda_t)), np.full(n_s, float(lambda_s)), np.full(n_y, float(lambda_year))]
    )
    return PenaltyWeights(w, n_t, n_s, n_y)


def assemble(
    spec: GridSpec, lambda_t: float, lambda_s: float, lambda_year: float = 0.0
) -> tuple[sp.csr_array, PenaltyWeights]:
    """Stack [temporal; spatial; longhorizon] with the matching weights.

    Long-horizon rows are included whenever the spec defines at least
    three years, independent of the weight value.
    """
    blocks = [build_temporal(spec), build_spatial(spec)]
    lh = build_longhorizon(spec)
    if lh.shape[0]:
        blocks.append(lh)
    D = sp.csr_array(sp.vstack(blocks, format="csr"))
    return D, penalty_weights(spec, lambda_t, lambda_s, lambda_year)


def operator_norm(D, tol: float = 1e-6, max_iter: int = 20000, seed: int = 0) -> float:
    """Largest singular value of D by power iteration on D^T D.

    Stops when the Rayleigh quotient changes by less than ``tol`` relative
    between iterations; raises :class:`PowerIterationError` carrying the
    best estimate if the cap is hit first.  Large difference operators
    have tightly clustered top eigenvalues: the quotient then lands inside
    the top cluster long before the iterate settles, so the default
    tolerance is deliberately modest.  Tighten it for small matrices.
    """
    if D.shape[0] == 0 or D.nnz == 0:
        raise ValidationError("operator_norm requires a nonzero operator")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(D.shape[1])
    v /= np.linalg.norm(v)
    sigma_sq = 0.0
    for _ in range(max_iter):
        w = D.T @ (D @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:  # v landed in the null space; restart
            v = rng.standard_normal(D.shape[1])
            v /= np.linalg.norm(v)
            continue
        new_sigma_sq = float(v @ w)
        v = w / nw
        if abs(new_sigma_sq - sigma_sq) <= tol * max(new_sigma_sq, 1e-300):
            return float(np.sqrt(new_sigma_sq))
        sigma_sq = new_sigma_sq
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} iterations",
        best_estimate=float(np.sqrt(sigma_sq)),
    )


def dump_triplets(D, stream):
    """Debug dump: one 'row col value' line per stored entry."""
    coo = sp.coo_array(D)
    for r, c, v in zip(coo.row, coo.col, coo.data):
        stream.write(f"{int(r)} {int(c)} {float(v)!r}\n")
