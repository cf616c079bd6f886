"""Observation data model, CSV ingestion, and validation.

A :class:`Sample` is the immutable container every estimator consumes: an
outcome vector ``y``, a binary treatment vector ``d``, and an ``(n, k)``
covariate matrix ``x``, in file row order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CSVParseError, SampleValidationError, SchemaError


@dataclass(frozen=True)
class Observation:
    """One unit: realized outcome, treatment indicator, covariate vector."""

    y: float
    d: int
    x: tuple


@dataclass(frozen=True)
class CSVSchema:
    """Maps the logical columns (y, d, x...) onto CSV header names."""

    y: str
    d: str
    x: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        if len(self.x) == 0:
            raise SchemaError("schema needs at least one covariate column")


@dataclass(frozen=True)
class Sample:
    """Immutable sample of n observations with k covariates each.

    Arrays are marked read-only so a Sample can be shared across threads.
    Observation order is the ingestion order; indices are stable identities.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    column_names: tuple

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        d = np.asarray(self.d, dtype=int)
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise SampleValidationError("x must be a 2-D (n, k) array")
        n = y.shape[0]
        if d.shape != (n,) or x.shape[0] != n:
            raise SampleValidationError("y, d, x row counts differ")
        if n < 2:
            raise SampleValidationError(f"need at least 2 observations, got {n}")
        if not np.isin(d, (0, 1)).all():
            raise SampleValidationError("d must contain only 0/1 values")
        treated = int(d.sum())
        if treated == 0:
            raise SampleValidationError("treated arm empty")
        if treated == n:
            raise SampleValidationError("control arm empty")
        names = tuple(self.column_names)
        if len(names) != 2 + x.shape[1]:
            raise SampleValidationError("column_names must cover y, d and each x column")
        for a in (y, d, x):
            a.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def k(self):
        return self.x.shape[1]

    @property
    def n_treated(self):
        return int(self.d.sum())

    @property
    def n_control(self):
        return self.n - self.n_treated

    def observation(self, i):
        """Return observation i as a plain record."""
        return Observation(float(self.y[i]), int(self.d[i]), tuple(self.x[i]))

    def observations(self):
        return [self.observation(i) for i in range(self.n)]


@dataclass
class ValidationReport:
    """Report-only data quality summary; never raises."""

    n: int
    treated: int
    control: int
    nonfinite: list = field(default_factory=list)  # (row index, column name)
    constant_columns: list = field(default_factory=list)
    duplicate_rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def load_csv(path, schema):
    """Read a UTF-8, comma-separated file with a header row into a Sample.

    d cells must be the literals "0" or "1" after stripping whitespace; any
    missing or non-numeric field is a hard error carrying its 1-based data
    row number. Rows are never silently dropped.
    """
    if not isinstance(schema, CSVSchema):
        schema = CSVSchema(**schema)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        wanted = (schema.y, schema.d) + schema.x
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        col = {name: header.index(name) for name in wanted}

        ys, ds, xs = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise CSVParseError(
                    f"data row {row_no}: expected {len(header)} fields, got {len(row)}",
                    row=row_no,
                )
            cells = [c.strip() for c in row]
            d_text = cells[col[schema.d]]
            if d_text not in ("0", "1"):
                raise CSVParseError(
                    f"data row {row_no}: d must be literal 0 or 1, got {d_text!r}",
                    row=row_no,
                )
            ds.append(int(d_text))
            ys.append(_parse_float(cells[col[schema.y]], schema.y, row_no))
            xs.append([_parse_float(cells[col[c]], c, row_no) for c in schema.x])

    if len(ys) < 2:
        raise SampleValidationError(f"{path}: need at least 2 data rows, got {len(ys)}")
    treated = sum(ds)
    if treated == 0:
        raise SampleValidationError(f"{path}: control-only data, treated arm empty")
    if treated == len(ds):
        raise SampleValidationError(f"{path}: treated-only data, control arm empty")
    return Sample(
        y=np.array(ys, dtype=float),
        d=np.array(ds, dtype=int),
        x=np.array(xs, dtype=float),
        column_names=(schema.y, schema.d) + schema.x,
    )


def _parse_float(text, column, row_no):
    if text == "":
        raise CSVParseError(f"data row {row_no}: missing value in column {column!r}", row=row_no)
    try:
        return float(text)
    except ValueError:
        raise CSVParseError(
            f"data row {row_no}: non-numeric value {text!r} in column {column!r}",
            row=row_no,
        ) from None


def write_csv(sample, path):
    """Write a Sample back to CSV; floats use shortest exact repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(sample.column_names)
        for i in range(sample.n):
            writer.writerow(
                [repr(float(sample.y[i])), str(int(sample.d[i]))]
                + [repr(float(v)) for v in sample.x[i]]
            )


def validate(sample):
    """Summarize data quality: arm counts, non-finite cells, constant or
    collinear covariate columns, duplicate rows. Row indices are 0-based."""
    report = ValidationReport(n=sample.n, treated=sample.n_treated, control=sample.n_control)

    y_name = sample.column_names[0]
    x_names = sample.column_names[2:]
    for i in np.flatnonzero(~np.isfinite(sample.y)):
        report.nonfinite.append((int(i), y_name))
    for j, name in enumerate(x_names):
        for i in np.flatnonzero(~np.isfinite(sample.x[:, j])):
            report.nonfinite.append((int(i), name))

    for j, name in enumerate(x_names):
        column = sample.x[:, j]
        if np.isfinite(column).all() and np.all(column == column[0]):
            report.constant_columns.append(name)
    if len(report.constant_columns) >= 2:
        report.warnings.append(
            "collinear constant: columns "
            + ", ".join(report.constant_columns)
            + " are all constant"
        )

    seen = {}
    for i in range(sample.n):
        key = (float(sample.y[i]), int(sample.d[i]), tuple(float(v) for v in sample.x[i]))
        if key in seen and all(math.isfinite(v) for v in (key[0],) + key[2]):
            report.duplicate_rows.append(i)
        else:
            seen[key] = i
    return report
