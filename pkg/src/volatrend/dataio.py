"""Dataset ingestion and result export.

Two dataset formats:

* ``f64-grid``: binary, little-endian.  Magic "VTRD1", then three uint64
  dimensions (n_rows, n_cols, n_time), then n_rows*n_cols*n_time float64
  values in flat order (location-major, time-minor).
* ``csv-long``: text with header ``row,col,t,value`` and one line per
  space-time point; every point must appear exactly once.

Exports: the SD field in f64-grid format, annual-average SD and variance
change maps as CSV, and a key=value run manifest.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .grid import Field, GridSpec, SolverResult, annual_average_sd, variance_change_map

__all__ = [
    "GRID_MAGIC",
    "DatasetMeta",
    "Dataset",
    "write_f64_grid",
    "read_f64_grid",
    "write_csv_long",
    "ingest",
    "write_manifest",
    "export_results",
]

GRID_MAGIC = b"VTRD1"
FORMATS = ("f64-grid", "csv-long")


@dataclass(frozen=True)
class DatasetMeta:
    units: str = ""
    origin: str = ""
    source: str = ""


@dataclass(frozen=True)
class Dataset:
    field: Field
    meta: DatasetMeta = dataclass_field(default_factory=DatasetMeta)

    @property
    def spec(self) -> GridSpec:
        return self.field.spec

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def write_f64_grid(path, field: Field):
    spec = field.spec
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<QQQ", spec.n_rows, spec.n_cols, spec.n_time))
        fh.write(np.asarray(field.values, dtype="<f8").tobytes())


def read_f64_grid(path, **spec_kwargs) -> Field:
    raw = Path(path).read_bytes()
    if raw[: len(GRID_MAGIC)] != GRID_MAGIC:
        raise ValidationError(f"{path}: not an f64-grid file (bad magic)")
    off = len(GRID_MAGIC)
    n_rows, n_cols, n_time = struct.unpack_from("<QQQ", raw, off)
    off += 24
    expected = n_rows * n_cols * n_time
    values = np.frombuffer(raw, dtype="<f8", offset=off)
    if values.size != expected:
        raise ValidationError(
            f"{path}: payload holds {values.size} values, header promises {expected}"
        )
    spec = GridSpec(n_rows=int(n_rows), n_cols=int(n_cols), n_time=int(n_time), **spec_kwargs)
    return Field(spec, values.copy())


def write_csv_long(path, field: Field):
    spec = field.spec
    cube = field.cube()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "t", "value"])
        for i in range(spec.n_rows):
            for j in range(spec.n_cols):
                for t in range(spec.n_time):
                    writer.writerow([i, j, t, f"{cube[i, j, t]:.17g}"])


def _read_csv_long(path, **spec_kwargs) -> Field:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["row", "col", "t", "value"]:
            raise ValidationError(f"{path}: expected header 'row,col,t,value'")
        for line_no, parts in enumerate(reader, start=2):
            if not parts:
                continue
            if len(parts) != 4:
                raise ValidationError(f"{path}:{line_no}: expected 4 columns")
            rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    arr = np.array([(r[0], r[1], r[2]) for r in rows], dtype=np.int64)
    vals = np.array([r[3] for r in rows])
    if arr.min() < 0:
        raise ValidationError(f"{path}: negative coordinates")
    n_rows, n_cols, n_time = (int(arr[:, k].max()) + 1 for k in range(3))
    spec = GridSpec(n_rows=n_rows, n_cols=n_cols, n_time=n_time, **spec_kwargs)

    flat = (arr[:, 0] * n_cols + arr[:, 1]) * n_time + arr[:, 2]
    seen = np.zeros(spec.size, dtype=bool)
    if np.any(seen[flat]) or np.unique(flat).size != flat.size:
        raise ValidationError(f"{path}: duplicate coordinates")
    seen[flat] = True
    if not seen.all():
        missing = np.flatnonzero(~seen)[:10]
        coords = [
            (int(k // (n_cols * n_time)), int((k // n_time) % n_cols), int(k % n_time))
            for k in missing
        ]
        raise ValidationError(f"{path}: missing cells (first {len(coords)}): {coords}")
    values = np.empty(spec.size)
    values[flat] = vals
    return Field(spec, values)


def ingest(
    path,
    fmt: str = "f64-grid",
    meta: DatasetMeta | None = None,
    **spec_kwargs,
) -> Dataset:
    """Load and validate a dataset; extra keywords configure the GridSpec
    topology (wrap_columns, polar_join, year_boundaries)."""
    if fmt not in FORMATS:
        raise ValidationError(f"unknown format {fmt!r}; choose from {FORMATS}")
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: no such file")
    if fmt == "f64-grid":
        field = read_f64_grid(path, **spec_kwargs)
    else:
        field = _read_csv_long(path, **spec_kwargs)
    if not np.all(np.isfinite(field.values)):
        bad = int(np.flatnonzero(~np.isfinite(field.values))[0])
        raise ValidationError(f"{path}: non-finite value at flat index {bad}")
    return Dataset(field=field, meta=meta or DatasetMeta(source=str(path)))


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_manifest(path, entries: dict):
    """Deterministic key=value text file, keys sorted."""
    with open(path, "w") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={_fmt_value(entries[key])}\n")


def export_results(
    result: SolverResult,
    out_dir,
    base_year: int = 0,
    manifest_extra: dict | None = None,
) -> dict[str, Path]:
    """Write the SD field, annual summaries and a run manifest.

    Annual files require year boundaries on the grid spec and are skipped
    otherwise.  Returns the mapping of artifact name to path.
    """
    if not result.converged:
        raise ValidationError("refusing to export an unconverged result")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = result.h_hat.spec
    paths: dict[str, Path] = {}

    sd_field = Field(spec, np.exp(result.h_hat.values / 2.0))
    paths["sd"] = out_dir / "sd.f64grid"
    write_f64_grid(paths["sd"], sd_field)

    if spec.year_boundaries:
        annual = annual_average_sd(result.h_hat)
        paths["annual_sd"] = out_dir / "annual_sd.csv"
        with open(paths["annual_sd"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "year", "sd"])
            for year in range(annual.shape[0]):
                for i in range(spec.n_rows):
                    for j in range(spec.n_cols):
                        writer.writerow([i, j, year, f"{annual[year, i, j]:.17g}"])

        change = variance_change_map(result.h_hat, base_year)
        paths["variance_change"] = out_dir / "variance_change.csv"
        with open(paths["variance_change"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "delta"])
            for i in range(spec.n_rows):
                for j in range(spec.n_cols):
                    writer.writerow([i, j, f"{change[i, j]:.17g}"])

    entries = {
        "n_rows": spec.n_rows,
        "n_cols": spec.n_cols,
        "n_time": spec.n_time,
        "wrap_columns": spec.wrap_columns,
        "polar_join": spec.polar_join,
        "year_boundaries": ",".join(str(b) for b in spec.year_boundaries),
        "base_year": base_year,
        "iterations": result.iterations,
        "converged": result.converged,
        "epsilon": result.epsilon_used if result.epsilon_used is not None else "",
    }
    if manifest_extra:
        entries.update(manifest_extra)
    paths["manifest"] = out_dir / "manifest.txt"
    write_manifest(paths["manifest"], entries)
    return paths
