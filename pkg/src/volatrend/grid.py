"""Core data types for gridded spatio-temporal fields.

A field over an ``n_rows x n_cols`` grid observed at ``n_time`` steps is
stored as a flat vector of length ``n_time * n_rows * n_cols``.  The
flattening convention is location-major, time-minor:

    flat(i, j, t) = (i * n_cols + j) * n_time + t

so each location's time series occupies a contiguous slice.  Reshaping the
flat vector to ``(n_rows, n_cols, n_time)`` in C order recovers the cube.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import ValidationError

__all__ = [
    "GridSpec",
    "Field",
    "SolverConfig",
    "SolverResult",
    "flatten_index",
    "unflatten_index",
    "negative_log_likelihood",
    "penalized_objective",
    "annual_average_sd",
    "variance_change_map",
]


@dataclass(frozen=True)
class GridSpec:
    """Dimensions and boundary topology of a space-time grid.

    ``year_boundaries`` is a fence-post list of time indices partitioning
    the time axis into years: it must start at 0, end at ``n_time``, and be
    strictly increasing.  An empty tuple means no year structure.
    ``time_step`` is informational metadata only.
    """

    n_rows: int
    n_cols: int
    n_time: int
    wrap_columns: bool = False
    polar_join: bool = False
    time_step: float = 1.0
    year_boundaries: tuple[int, ...] = ()

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValidationError("grid must have at least one row and column")
        if self.n_time < 3:
            raise ValidationError(
                "need n_time >= 3 (temporal second differences span three steps)"
            )
        yb = tuple(int(b) for b in self.year_boundaries)
        object.__setattr__(self, "year_boundaries", yb)
        if yb:
            if list(yb) != sorted(set(yb)):
                raise ValidationError("year_boundaries must be strictly increasing")
            if yb[0] != 0 or yb[-1] != self.n_time:
                raise ValidationError(
                    "year_boundaries must start at 0 and end at n_time"
                )

    @property
    def n_cells(self) -> int:
        """Number of spatial locations S."""
        return self.n_rows * self.n_cols

    @property
    def size(self) -> int:
        """Total number of space-time points T*S."""
        return self.n_time * self.n_cells

    @property
    def n_years(self) -> int:
        return max(len(self.year_boundaries) - 1, 0)

    def year_slices(self) -> list[slice]:
        yb = self.year_boundaries
        return [slice(yb[k], yb[k + 1]) for k in range(len(yb) - 1)]


def flatten_index(i, j, t, spec: GridSpec):
    """Map grid coordinates to flat vector positions (vectorized)."""
    i = np.asarray(i)
    j = np.asarray(j)
    t = np.asarray(t)
    if (
        np.any(i < 0)
        or np.any(i >= spec.n_rows)
        or np.any(j < 0)
        or np.any(j >= spec.n_cols)
        or np.any(t < 0)
        or np.any(t >= spec.n_time)
    ):
        raise IndexError("grid coordinates out of range")
    flat = (i * spec.n_cols + j) * spec.n_time + t
    return int(flat) if flat.ndim == 0 else flat


def unflatten_index(k, spec: GridSpec):
    """Inverse of :func:`flatten_index`."""
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k >= spec.size):
        raise IndexError("flat index out of range")
    t = k % spec.n_time
    loc = k // spec.n_time
    j = loc % spec.n_cols
    i = loc // spec.n_cols
    if k.ndim == 0:
        return int(i), int(j), int(t)
    return i, j, t


@dataclass(frozen=True)
class Field:
    """A dense real field over a grid, flat storage.

    Used both for observations y and for log-variance parameters h.  The
    value buffer is made read-only so instances can be shared freely.
    """

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).reshape(-1)
        if arr.size != self.spec.size:
            raise ValidationError(
                f"field has {arr.size} values, spec requires {self.spec.size}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "Field":
        return cls(spec, np.zeros(spec.size))

    @classmethod
    def from_cube(cls, spec: GridSpec, cube: np.ndarray) -> "Field":
        cube = np.asarray(cube, dtype=float)
        if cube.shape != (spec.n_rows, spec.n_cols, spec.n_time):
            raise ValidationError(
                f"cube shape {cube.shape} does not match spec "
                f"({spec.n_rows}, {spec.n_cols}, {spec.n_time})"
            )
        return cls(spec, cube.reshape(-1))

    def cube(self) -> np.ndarray:
        """View of the values as an (n_rows, n_cols, n_time) array."""
        return self.values.reshape(self.spec.n_rows, self.spec.n_cols, self.spec.n_time)

    def series(self, i: int, j: int) -> np.ndarray:
        """Time series at one location."""
        start = flatten_index(i, j, 0, self.spec)
        return self.values[start : start + self.spec.n_time]


@dataclass(frozen=True)
class SolverConfig:
    """Tuning parameters shared by the full-field solvers.

    ``mu`` (linearized step size), ``epsilon`` (convergence tolerance) and
    ``max_iter`` may be left as None, in which case the solver picks a
    default: mu from the operator norm bound, epsilon as 0.001% of the data
    mean square, max_iter per solver.
    """

    lambda_t: float
    lambda_s: float
    lambda_year: float = 0.0
    rho: float = 1.0
    mu: float | None = None
    epsilon: float | None = None
    max_iter: int | None = None
    warm_start: Field | None = None
    verbose: bool = False

    def __post_init__(self):
        if self.lambda_t < 0 or self.lambda_s < 0 or self.lambda_year < 0:
            raise ValidationError("penalty weights must be nonnegative")
        if self.rho <= 0:
            raise ValidationError("rho must be positive")
        if self.mu is not None and self.mu <= 0:
            raise ValidationError("mu must be positive")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")


@dataclass
class SolverResult:
    """Estimated log-variance field plus per-iteration diagnostics.

    ``z`` and ``u`` hold the final penalty-space iterate and scaled dual
    of the linearized solver (diagnostics and warm starts).
    """

    h_hat: Field
    objective_trace: np.ndarray
    primal_residual_trace: np.ndarray
    dual_residual_trace: np.ndarray
    iterations: int
    converged: bool
    epsilon_used: float | None = None
    z: np.ndarray | None = None
    u: np.ndarray | None = None

    def sd(self) -> np.ndarray:
        """Estimated standard deviation exp(h/2) at every point."""
        return np.exp(self.h_hat.values / 2.0)


def _check_same_spec(a: Field, b: Field):
    if a.spec.size != b.spec.size or (
        (a.spec.n_rows, a.spec.n_cols, a.spec.n_time)
        != (b.spec.n_rows, b.spec.n_cols, b.spec.n_time)
    ):
        raise ValidationError("fields are defined on different grids")


def negative_log_likelihood(y: Field, h: Field) -> float:
    """Gaussian negative log-likelihood sum(h + y^2 exp(-h)), up to constants.

    y holds zero-mean observations, h the log-variance parameters.
    """
    _check_same_spec(y, h)
    return float(np.sum(h.values + y.values**2 * np.exp(-h.values)))


def penalized_objective(y: Field, h: Field, D, weights) -> float:
    """Full objective: negative log-likelihood plus weighted l1 penalty."""
    w = np.asarray(getattr(weights, "weights", weights), dtype=float)
    return negative_log_likelihood(y, h) + float(w @ np.abs(D @ h.values))


def annual_average_sd(h: Field) -> np.ndarray:
    """Per-year, per-location mean of the estimated SD exp(h/2).

    Returns an array of shape (n_years, n_rows, n_cols).
    """
    spec = h.spec
    if not spec.year_boundaries:
        raise ValidationError("spec has no year boundaries")
    sd = np.exp(h.cube() / 2.0)
    out = np.empty((spec.n_years, spec.n_rows, spec.n_cols))
    for k, sl in enumerate(spec.year_slices()):
        out[k] = sd[:, :, sl].mean(axis=2)
    return out


def variance_change_map(h: Field, base_year: int = 0) -> np.ndarray:
    """Cumulative change of mean annual variance relative to a base year.

    For each location, sums (mean variance in year k) - (mean variance in
    the base year) over all years k after the base year.
    """
    spec = h.spec
    if not spec.year_boundaries:
        raise ValidationError("spec has no year boundaries")
    if not 0 <= base_year < spec.n_years:
        raise ValidationError(f"base_year {base_year} out of range")
    var = np.exp(h.cube())
    annual = np.stack([var[:, :, sl].mean(axis=2) for sl in spec.year_slices()])
    later = annual[base_year + 1 :]
    return (later - annual[base_year]).sum(axis=0)
