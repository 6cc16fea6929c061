"""Column-typed datasets with an explicit missingness mask.

Continuous cells are 64-bit floats; categorical cells are stored as level
codes into the declared level list. Missingness is tracked in a separate
boolean mask, never by sentinel values. Datasets are immutable after
construction; subsetting returns copies.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger("pcmiss.data")

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

#: CSV tokens accepted as a missing cell on read.
MISSING_TOKENS = ("", "NA")


class DataError(ValueError):
    """Raised for schema violations and malformed data."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise DataError(f"unknown column kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if len(self.levels) < 2:
                raise DataError(f"column {self.name!r} needs at least 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise DataError(f"column {self.name!r} has duplicate levels")
            object.__setattr__(self, "levels", tuple(str(s) for s in self.levels))
        elif self.levels:
            raise DataError(f"continuous column {self.name!r} cannot declare levels")

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS


@dataclass(frozen=True)
class ResponseVector:
    """Row-wise joint observedness of a variable set."""

    variables: frozenset
    flags: np.ndarray  # bool, shape (n,)

    def all_observed(self) -> bool:
        return bool(self.flags.all())


class Dataset:
    """Rectangular data over a column schema with explicit missingness."""

    __slots__ = ("schema", "values", "missing", "provenance", "_col")

    def __init__(
        self,
        schema: Sequence[ColumnSchema],
        values: np.ndarray,
        missing: np.ndarray | None = None,
        provenance: str = "",
    ):
        schema = tuple(schema)
        names = [c.name for c in schema]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(schema):
            raise DataError(
                f"values shape {values.shape} does not match {len(schema)} columns"
            )
        if missing is None:
            missing = np.zeros(values.shape, dtype=bool)
        missing = np.asarray(missing, dtype=bool)
        if missing.shape != values.shape:
            raise DataError("missingness mask shape mismatch")
        values = values.copy()
        missing = missing.copy()
        for j, col in enumerate(schema):
            present = ~missing[:, j]
            cells = values[present, j]
            if col.is_continuous:
                if not np.isfinite(cells).all():
                    raise DataError(f"non-finite value in continuous column {col.name!r}")
            else:
                codes = cells.astype(int)
                if cells.size and (
                    (codes != cells).any() or codes.min() < 0 or codes.max() >= len(col.levels)
                ):
                    raise DataError(f"invalid level code in column {col.name!r}")
        # missing cells carry no payload
        values[missing] = np.nan
        values.setflags(write=False)
        missing.setflags(write=False)
        self.schema = schema
        self.values = values
        self.missing = missing
        self.provenance = provenance
        self._col = {c.name: j for j, c in enumerate(schema)}

    # -- basics ----------------------------------------------------------

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.schema)

    def column_index(self, name: str) -> int:
        try:
            return self._col[name]
        except KeyError:
            raise DataError(f"unknown variable {name!r}") from None

    def column_schema(self, name: str) -> ColumnSchema:
        return self.schema[self.column_index(name)]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]

    def column_missing(self, name: str) -> np.ndarray:
        return self.missing[:, self.column_index(name)]

    def is_complete(self) -> bool:
        return not self.missing.any()

    def missing_fraction(self) -> float:
        return float(self.missing.mean()) if self.values.size else 0.0

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.schema != other.schema or self.values.shape != other.values.shape:
            return False
        if not np.array_equal(self.missing, other.missing):
            return False
        ok = ~self.missing
        return np.array_equal(self.values[ok], other.values[ok])

    def __repr__(self):
        return (
            f"Dataset(n={self.n}, columns={len(self.schema)},"
            f" missing={self.missing.sum()})"
        )

    def replace_values(self, values: np.ndarray, provenance: str | None = None) -> "Dataset":
        return Dataset(
            self.schema,
            values,
            np.zeros_like(self.missing),
            self.provenance if provenance is None else provenance,
        )

    def take_rows(self, rows) -> "Dataset":
        return Dataset(
            self.schema, self.values[rows], self.missing[rows], self.provenance
        )


# -- core operations -----------------------------------------------------


def response_indicator(ds: Dataset, variables: Iterable[str]) -> ResponseVector:
    """Per-row conjunction of observedness over ``variables``.

    The empty set yields the all-true vector (vacuous conjunction).
    """
    variables = (
        frozenset([variables]) if isinstance(variables, str) else frozenset(variables)
    )
    flags = np.ones(ds.n, dtype=bool)
    for v in variables:
        flags &= ~ds.column_missing(v)
    return ResponseVector(variables, flags)


def testwise_subset(ds: Dataset, variables: Iterable[str]) -> Dataset:
    """Rows where all of ``variables`` are observed, restricted to them.

    The result may have zero rows; callers must handle that.
    """
    if isinstance(variables, str):
        variables = [variables]
    variables = list(dict.fromkeys(variables))
    flags = response_indicator(ds, variables).flags
    cols = sorted((ds.column_index(v) for v in variables))
    return Dataset(
        [ds.schema[j] for j in cols],
        ds.values[np.ix_(flags, cols)],
        ds.missing[np.ix_(flags, cols)],
        ds.provenance,
    )


def listwise_subset(ds: Dataset) -> Dataset:
    """Complete rows only, all columns."""
    flags = ~ds.missing.any(axis=1)
    return ds.take_rows(flags)


def single_impute_mean_mode(ds: Dataset) -> Dataset:
    """Fill gaps with the observed column mean (continuous) or modal level
    (categorical); mode ties break by declared level order."""
    values = ds.values.copy()
    for j, col in enumerate(ds.schema):
        gaps = ds.missing[:, j]
        if not gaps.any():
            continue
        observed = values[~gaps, j]
        if observed.size == 0:
            raise DataError(f"column {col.name!r} has no observed values")
        if col.is_continuous:
            fill = observed.mean()
        else:
            counts = np.bincount(observed.astype(int), minlength=len(col.levels))
            fill = float(np.argmax(counts))  # argmax takes the first maximum
        values[gaps, j] = fill
    return Dataset(ds.schema, values, None, ds.provenance)


# -- categorical helpers ---------------------------------------------------


def codes(ds: Dataset, name: str) -> np.ndarray:
    """Observed-or-not integer level codes (missing cells are -1)."""
    col = ds.column_schema(name)
    if col.is_continuous:
        raise DataError(f"column {name!r} is continuous")
    out = np.full(ds.n, -1, dtype=np.int64)
    present = ~ds.column_missing(name)
    out[present] = ds.column(name)[present].astype(np.int64)
    return out


# -- CSV and schema sidecar IO ---------------------------------------------


def schema_to_json(schema: Sequence[ColumnSchema]) -> str:
    out = []
    for col in schema:
        entry: dict = {"name": col.name, "kind": col.kind}
        if not col.is_continuous:
            entry["levels"] = list(col.levels)
        out.append(entry)
    return json.dumps(out, indent=2) + "\n"


def schema_from_json(text: str) -> tuple[ColumnSchema, ...]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid schema JSON: {exc}") from exc
    out = []
    for entry in raw:
        out.append(
            ColumnSchema(
                entry["name"], entry["kind"], tuple(entry.get("levels") or ())
            )
        )
    return tuple(out)


def _format_cell(col: ColumnSchema, value: float, is_missing: bool) -> str:
    if is_missing:
        return ""
    if col.is_continuous:
        return repr(float(value))
    return col.levels[int(value)]


def write_csv(ds: Dataset, path, schema_path=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.names)
        for i in range(ds.n):
            writer.writerow(
                _format_cell(col, ds.values[i, j], ds.missing[i, j])
                for j, col in enumerate(ds.schema)
            )
    if schema_path is not None:
        with open(schema_path, "w") as fh:
            fh.write(schema_to_json(ds.schema))


def _infer_schema(header: list[str], rows: list[list[str]]) -> tuple[ColumnSchema, ...]:
    """Columns parsing fully as numbers are continuous, the rest categorical
    with levels in first-appearance order. Logged, never silent."""
    out = []
    for j, name in enumerate(header):
        cells = [r[j] for r in rows if r[j] not in MISSING_TOKENS]
        numeric = True
        for cell in cells:
            try:
                float(cell)
            except ValueError:
                numeric = False
                break
        if numeric and cells:
            out.append(ColumnSchema(name, CONTINUOUS))
        else:
            levels = list(dict.fromkeys(cells))
            out.append(ColumnSchema(name, CATEGORICAL, tuple(levels)))
    log.warning(
        "no schema sidecar: inferred %s",
        ", ".join(f"{c.name}:{c.kind}" for c in out),
    )
    return tuple(out)


def read_csv(path, schema: Sequence[ColumnSchema] | None = None, provenance="") -> Dataset:
    with open(path, newline="") as fh:
        return read_csv_text(fh.read(), schema, provenance or str(path))


def read_csv_text(
    text: str, schema: Sequence[ColumnSchema] | None = None, provenance=""
) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty CSV") from None
    rows = [row for row in reader if row]
    for row in rows:
        if len(row) != len(header):
            raise DataError("ragged CSV row")
    if schema is None:
        schema = _infer_schema(header, rows)
    else:
        schema = tuple(schema)
        if [c.name for c in schema] != header:
            raise DataError("CSV header does not match schema")
    values = np.zeros((len(rows), len(header)))
    missing = np.zeros_like(values, dtype=bool)
    level_index = [
        None if c.is_continuous else {s: k for k, s in enumerate(c.levels)}
        for c in schema
    ]
    for i, row in enumerate(rows):
        for j, cell in enumerate(row):
            if cell in MISSING_TOKENS:
                missing[i, j] = True
                continue
            if schema[j].is_continuous:
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise DataError(
                        f"row {i + 1}: cannot parse {cell!r} as a number"
                    ) from None
            else:
                try:
                    values[i, j] = level_index[j][cell]
                except KeyError:
                    raise DataError(
                        f"row {i + 1}: {cell!r} is not a level of {schema[j].name!r}"
                    ) from None
    return Dataset(schema, values, missing, provenance)
