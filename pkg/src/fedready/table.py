"""Columnar in-memory dataset: typed columns, dataset metadata, load/save.

Tables are immutable after construction; every transformation returns a new
table. Missing cells are first-class (``None``) and are excluded from numeric
statistics but counted by ``missing_fraction``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import yaml

from .errors import EmptyInput, ParseError, SchemaError

Cell = float | str | None

NUMERIC = "numeric"
CATEGORICAL = "categorical"
SINGLE = "single"
DOUBLE = "double"


@dataclass(frozen=True)
class ColumnKind:
    """Column type: numeric (single or double precision) or categorical."""

    base: str
    precision: str = DOUBLE

    def __post_init__(self) -> None:
        if self.base not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown column kind {self.base!r}")
        if self.base == NUMERIC and self.precision not in (SINGLE, DOUBLE):
            raise SchemaError(f"unknown precision {self.precision!r}")

    @property
    def is_numeric(self) -> bool:
        return self.base == NUMERIC

    @property
    def byte_width(self) -> int:
        """Payload bytes per numeric cell (4 for single, 8 for double)."""
        if not self.is_numeric:
            raise SchemaError("byte_width is defined for numeric columns only")
        return 4 if self.precision == SINGLE else 8


NUMERIC_DOUBLE = ColumnKind(NUMERIC, DOUBLE)
NUMERIC_SINGLE = ColumnKind(NUMERIC, SINGLE)
CATEGORICAL_KIND = ColumnKind(CATEGORICAL)


def _normalize_cell(value: Cell, kind: ColumnKind) -> Cell:
    if value is None:
        return None
    if kind.is_numeric:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"numeric column got non-numeric cell {value!r}")
        v = float(value)
        if math.isnan(v):
            return None
        if kind.precision == SINGLE:
            v = float(np.float32(v))
        return v
    if not isinstance(value, str):
        raise SchemaError(f"categorical column got non-string cell {value!r}")
    return value


@dataclass(frozen=True)
class Column:
    """Named, typed, fixed-length sequence of cells. ``None`` marks missing."""

    name: str
    kind: ColumnKind
    values: tuple[Cell, ...]

    @staticmethod
    def of(name: str, kind: ColumnKind, values: Iterable[Cell]) -> Column:
        """Build a column, normalizing cells to the kind (float cast, single
        precision rounding, NaN treated as missing)."""
        return Column(name, kind, tuple(_normalize_cell(v, kind) for v in values))

    def non_missing(self) -> list[Cell]:
        return [v for v in self.values if v is not None]

    def missing_count(self) -> int:
        return sum(1 for v in self.values if v is None)


def numeric_values(col: Column) -> np.ndarray:
    """Non-missing cells of a numeric column as a float64 array."""
    if not col.kind.is_numeric:
        raise SchemaError(f"column {col.name!r} is not numeric")
    return np.array([v for v in col.values if v is not None], dtype=np.float64)


@dataclass(frozen=True)
class DatasetMeta:
    """Dataset-level annotations used by metrics and remedies."""

    client_id: str = "client"
    label_column: str | None = None
    sensitive_feature: str | None = None
    quasi_identifiers: tuple[str, ...] = ()
    positive_label: Cell = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "quasi_identifiers", tuple(self.quasi_identifiers))


@dataclass(frozen=True)
class DataTable:
    """Immutable columnar table with metadata.

    Invariants enforced at construction: equal column lengths, unique column
    names, and every meta reference names an existing column.
    """

    columns: tuple[Column, ...]
    meta: DatasetMeta = field(default_factory=DatasetMeta)

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")
        lengths = {len(c.values) for c in self.columns}
        if len(lengths) > 1:
            raise SchemaError(f"columns have differing lengths: {sorted(lengths)}")
        index = {c.name: c for c in self.columns}
        object.__setattr__(self, "_by_name", index)
        for ref in self._meta_references():
            if ref not in index:
                raise SchemaError(f"meta references missing column {ref!r}")

    def _meta_references(self) -> list[str]:
        refs = []
        if self.meta.label_column is not None:
            refs.append(self.meta.label_column)
        if self.meta.sensitive_feature is not None:
            refs.append(self.meta.sensitive_feature)
        refs.extend(self.meta.quasi_identifiers)
        return refs

    @property
    def n_rows(self) -> int:
        return len(self.columns[0].values) if self.columns else 0

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        try:
            return self._by_name[name]  # type: ignore[attr-defined]
        except KeyError:
            raise SchemaError(f"no column named {name!r}") from None

    def has_column(self, name: str) -> bool:
        return name in self._by_name  # type: ignore[attr-defined]

    def numeric_columns(self) -> list[Column]:
        return [c for c in self.columns if c.kind.is_numeric]

    def categorical_columns(self) -> list[Column]:
        return [c for c in self.columns if not c.kind.is_numeric]

    def row(self, i: int) -> tuple[Cell, ...]:
        return tuple(c.values[i] for c in self.columns)

    def iter_rows(self) -> Iterator[tuple[Cell, ...]]:
        return zip(*(c.values for c in self.columns)) if self.columns else iter(())

    def with_meta(self, meta: DatasetMeta) -> DataTable:
        return DataTable(self.columns, meta)

    def with_columns(self, columns: Sequence[Column]) -> DataTable:
        return DataTable(tuple(columns), self.meta)

    def gather_rows(self, indices: Sequence[int]) -> DataTable:
        """Rows at ``indices`` in the given order; repeats allowed."""
        n = self.n_rows
        for i in indices:
            if not 0 <= i < n:
                raise IndexError(f"row index {i} out of range for {n} rows")
        cols = tuple(
            Column(c.name, c.kind, tuple(c.values[i] for i in indices))
            for c in self.columns
        )
        return DataTable(cols, self.meta)

    def subset_rows(self, keep: Iterable[int]) -> DataTable:
        """Rows whose index is in ``keep``, original order preserved."""
        wanted = sorted(set(keep))
        return self.gather_rows(wanted)

    def append_rows(self, rows: Sequence[Sequence[Cell]]) -> DataTable:
        """New table with ``rows`` (ordered per ``columns``) appended."""
        for r in rows:
            if len(r) != len(self.columns):
                raise SchemaError("appended row width does not match table")
        cols = tuple(
            Column.of(c.name, c.kind, list(c.values) + [r[j] for r in rows])
            for j, c in enumerate(self.columns)
        )
        return DataTable(cols, self.meta)


def column_stats(t: DataTable, name: str) -> dict[str, float]:
    """Mean, median, population std dev, min, max, missing fraction of a
    numeric column, computed over non-missing cells."""
    col = t.column(name)
    if not col.kind.is_numeric:
        raise SchemaError(f"column {name!r} is not numeric")
    vals = numeric_values(col)
    if vals.size == 0:
        raise EmptyInput(f"column {name!r} has no non-missing cells")
    return {
        "mean": float(np.mean(vals)),
        "median": float(np.median(vals)),
        "std_dev": float(np.std(vals)),
        "min": float(np.min(vals)),
        "max": float(np.max(vals)),
        "missing_fraction": col.missing_count() / t.n_rows,
    }


# -- ingest / persist ---------------------------------------------------------

_FORMATS = ("csv", "ndjson")


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".schema.yaml")


def _load_schema(path: Path, schema: dict | str | Path | None) -> dict[str, ColumnKind]:
    if schema is None:
        sidecar = _sidecar_path(path)
        if not sidecar.exists():
            return {}
        schema = sidecar
    if isinstance(schema, (str, Path)):
        with open(schema, "r", encoding="utf-8") as fh:
            schema = yaml.safe_load(fh) or {}
    out: dict[str, ColumnKind] = {}
    for name, entry in schema.items():
        if isinstance(entry, str):
            entry = {"kind": entry}
        kind = entry.get("kind", NUMERIC)
        precision = entry.get("precision", DOUBLE)
        out[name] = ColumnKind(kind, precision if kind == NUMERIC else DOUBLE)
    return out


def _parse_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row required") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append(row)
    return header, rows


def _csv_cell(text: str) -> Cell:
    if text == "":
        return None
    return text


def _infer_csv_column(name: str, raw: list[Cell], kind: ColumnKind | None) -> Column:
    if kind is None:
        parsed: list[Cell] = []
        numeric = True
        for v in raw:
            if v is None:
                parsed.append(None)
                continue
            try:
                parsed.append(float(v))  # type: ignore[arg-type]
            except ValueError:
                numeric = False
                break
        if numeric and any(v is not None for v in raw):
            return Column.of(name, NUMERIC_DOUBLE, parsed)
        return Column.of(name, CATEGORICAL_KIND, raw)
    if kind.is_numeric:
        parsed = []
        for v in raw:
            if v is None:
                parsed.append(None)
                continue
            try:
                parsed.append(float(v))  # type: ignore[arg-type]
            except ValueError:
                raise ParseError(f"column {name!r}: non-numeric value {v!r}") from None
        return Column.of(name, kind, parsed)
    return Column.of(name, kind, raw)


def _parse_ndjson(path: Path) -> tuple[list[str], list[dict]]:
    records = []
    keys: list[str] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{lineno}: expected a flat object")
            if keys is None:
                keys = list(obj.keys())
            elif list(obj.keys()) != keys:
                raise ParseError(f"{path}:{lineno}: heterogeneous keys")
            records.append(obj)
    if keys is None:
        raise ParseError(f"{path}: no records")
    return keys, records


def _ndjson_column(name: str, raw: list, kind: ColumnKind | None) -> Column:
    cells: list[Cell] = []
    saw_number = saw_string = False
    for v in raw:
        if v is None:
            cells.append(None)
        elif isinstance(v, bool):
            raise ParseError(f"column {name!r}: unsupported boolean value")
        elif isinstance(v, (int, float)):
            saw_number = True
            cells.append(float(v))
        elif isinstance(v, str):
            saw_string = True
            cells.append(v)
        else:
            raise ParseError(f"column {name!r}: unsupported nested value {v!r}")
    if saw_number and saw_string:
        raise ParseError(f"column {name!r}: mixed numeric and string values")
    if kind is None:
        kind = NUMERIC_DOUBLE if saw_number else CATEGORICAL_KIND
    if kind.is_numeric and saw_string:
        raise ParseError(f"column {name!r}: schema says numeric, found strings")
    if not kind.is_numeric:
        cells = [str(v) if isinstance(v, float) else v for v in cells]
    return Column.of(name, kind, cells)


def load_table(
    path: str | Path,
    fmt: str | None = None,
    meta: DatasetMeta | None = None,
    schema: dict | str | Path | None = None,
) -> DataTable:
    """Load a CSV or NDJSON file into a :class:`DataTable`.

    Numeric columns are inferred unless a schema sidecar
    (``<path>.schema.yaml``) or explicit ``schema`` overrides the kind.
    """
    path = Path(path)
    if fmt is None:
        fmt = "ndjson" if path.suffix in (".ndjson", ".jsonl") else "csv"
    if fmt not in _FORMATS:
        raise ParseError(f"unknown format {fmt!r}")
    kinds = _load_schema(path, schema)
    if fmt == "csv":
        header, rows = _parse_csv(path)
        raw_cols = {h: [_csv_cell(r[i]) for r in rows] for i, h in enumerate(header)}
        columns = [_infer_csv_column(h, raw_cols[h], kinds.get(h)) for h in header]
    else:
        header, records = _parse_ndjson(path)
        columns = [
            _ndjson_column(h, [rec.get(h) for rec in records], kinds.get(h))
            for h in header
        ]
    return DataTable(tuple(columns), meta or DatasetMeta())


def save_table(t: DataTable, path: str | Path, fmt: str | None = None,
               with_schema: bool = True) -> None:
    """Write a table as CSV or NDJSON; by default also writes the schema
    sidecar so a reload reproduces kinds and precisions."""
    path = Path(path)
    if fmt is None:
        fmt = "ndjson" if path.suffix in (".ndjson", ".jsonl") else "csv"
    if fmt not in _FORMATS:
        raise ParseError(f"unknown format {fmt!r}")
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(t.column_names())
            for row in t.iter_rows():
                writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                                 for v in row])
    else:
        with open(path, "w", encoding="utf-8") as fh:
            names = t.column_names()
            for row in t.iter_rows():
                fh.write(json.dumps(dict(zip(names, row))) + "\n")
    if with_schema:
        schema = {
            c.name: ({"kind": NUMERIC, "precision": c.kind.precision}
                     if c.kind.is_numeric else {"kind": CATEGORICAL})
            for c in t.columns
        }
        with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
            yaml.safe_dump(schema, fh, sort_keys=True)


def replace_meta(t: DataTable, **changes) -> DataTable:
    """Convenience: new table with updated meta fields."""
    return t.with_meta(replace(t.meta, **changes))
