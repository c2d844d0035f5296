"""CSV datasets and adjacency files.

Datasets are RFC-4180 CSV with a header row; the literal string "NA"
(case-sensitive) marks a missing cell. Each column's type is inferred
from its first non-missing cell: integer, real, or categorical. Later
cells must coerce to that type, except that an integer column is
promoted to real when a fractional cell appears. Every violation is a
ParseError carrying row and column coordinates (rows counted from 1
including the header).

Adjacency files hold the node count on the first line, then one
undirected edge per line as two 0-based indices.
"""

from __future__ import annotations

import csv
import importlib.resources
import io as _io

import numpy as np

from ..errors import ParseError
from ..gmrf import SparsePrecision

MISSING_TOKEN = "NA"
INTEGER, REAL, CATEGORICAL = "integer", "real", "categorical"


def bundled_path(name: str) -> str:
    """Filesystem path of a data file shipped inside the package."""
    ref = importlib.resources.files("gmrfimpute") / "data" / name
    if not ref.is_file():
        raise ParseError(f"no bundled data file named {name!r}")
    return str(ref)


def bundled_config_path(name: str) -> str:
    """Filesystem path of a run config shipped inside the package."""
    ref = importlib.resources.files("gmrfimpute") / "configs" / name
    if not ref.is_file():
        raise ParseError(f"no bundled config named {name!r}")
    return str(ref)


def _coerce_int(cell: str):
    try:
        return int(cell)
    except ValueError:
        return None


def _coerce_float(cell: str):
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if np.isfinite(value) else None


class Column:
    """One typed column: values plus a missing mask."""

    __slots__ = ("name", "kind", "values", "missing")

    def __init__(self, name, kind, values, missing):
        self.name = name
        self.kind = kind
        self.values = values
        self.missing = np.asarray(missing, dtype=bool)

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())


class Dataset:
    """Parsed dataset: ordered named columns of equal length."""

    def __init__(self, columns, source="<memory>"):
        self.columns = {c.name: c for c in columns}
        self.names = [c.name for c in columns]
        self.n_rows = len(columns[0].values) if columns else 0
        self.source = source

    def __contains__(self, name) -> bool:
        return name in self.columns

    def column(self, name) -> Column:
        if name not in self.columns:
            raise ParseError(f"{self.source}: no column named {name!r}")
        return self.columns[name]

    def numeric(self, name) -> np.ndarray:
        """Float values with NaN at missing cells; categorical is an error."""
        col = self.column(name)
        if col.kind == CATEGORICAL:
            raise ParseError(
                f"{self.source}: column {name!r} is categorical, not numeric")
        out = np.full(self.n_rows, np.nan)
        for i, v in enumerate(col.values):
            if not col.missing[i]:
                out[i] = float(v)
        return out

    def categorical(self, name) -> list:
        """Labels as strings with None at missing cells."""
        col = self.column(name)
        return [None if col.missing[i] else str(v)
                for i, v in enumerate(col.values)]

    def levels(self, name) -> list:
        """Sorted distinct observed labels of a categorical column."""
        col = self.column(name)
        return sorted({str(v) for i, v in enumerate(col.values)
                       if not col.missing[i]})

    def dummies(self, name) -> tuple:
        """Indicator columns for every level after the first (the baseline).

        Categorical columns must be fully observed to enter a design.
        """
        col = self.column(name)
        if col.kind != CATEGORICAL:
            raise ParseError(
                f"{self.source}: column {name!r} is numeric; dummies need a "
                "categorical column")
        if col.n_missing:
            raise ParseError(
                f"{self.source}: column {name!r} has missing cells and "
                "cannot be expanded into a design")
        levels = self.levels(name)
        labels = [str(v) for v in col.values]
        matrix = np.column_stack(
            [[1.0 if lab == lev else 0.0 for lab in labels]
             for lev in levels[1:]]) if len(levels) > 1 else np.zeros((self.n_rows, 0))
        return matrix, [f"{name}.{lev}" for lev in levels[1:]]


def parse_dataset_text(text: str, source="<memory>") -> Dataset:
    """Parse CSV text into a Dataset; see the module docstring for rules."""
    reader = csv.reader(_io.StringIO(text))
    try:
        rows = list(reader)
    except csv.Error as exc:
        raise ParseError(f"{source}: malformed CSV ({exc})") from exc
    if not rows:
        raise ParseError(f"{source}: empty file")
    header = rows[0]
    if len(header) != len(set(header)):
        raise ParseError(f"{source}: duplicate column names in the header")
    if any(not name.strip() for name in header):
        raise ParseError(f"{source}: blank column name in the header")
    body = rows[1:]
    if not body:
        raise ParseError(f"{source}: no data rows")

    n_cols = len(header)
    for r, row in enumerate(body, start=2):
        if len(row) != n_cols:
            raise ParseError(
                f"{source}: row {r} has {len(row)} cells, expected {n_cols}")

    columns = []
    for j, name in enumerate(header):
        cells = [row[j] for row in body]
        missing = [c == MISSING_TOKEN for c in cells]
        kind = None
        for c, miss in zip(cells, missing):
            if not miss:
                if _coerce_int(c) is not None:
                    kind = INTEGER
                elif _coerce_float(c) is not None:
                    kind = REAL
                else:
                    kind = CATEGORICAL
                break
        if kind is None:
            kind = CATEGORICAL  # all cells missing; labels never materialize
        values = []
        for r, (c, miss) in enumerate(zip(cells, missing), start=2):
            if miss:
                values.append(None)
                continue
            if kind == CATEGORICAL:
                if c == "":
                    raise ParseError(
                        f"{source}: row {r}, column {name!r}: empty cell")
                values.append(c)
                continue
            if kind == INTEGER:
                v = _coerce_int(c)
                if v is not None:
                    values.append(v)
                    continue
                v = _coerce_float(c)
                if v is not None:
                    # fractional cell promotes the whole column to real
                    kind = REAL
                    values.append(v)
                    continue
                raise ParseError(
                    f"{source}: row {r}, column {name!r}: cannot coerce "
                    f"{c!r} to a number")
            v = _coerce_float(c)
            if v is None:
                raise ParseError(
                    f"{source}: row {r}, column {name!r}: cannot coerce "
                    f"{c!r} to a number")
            values.append(v)
        if kind == REAL:
            values = [float(v) if v is not None else None for v in values]
        columns.append(Column(name, kind, values, missing))
    return Dataset(columns, source=source)


def load_dataset(path) -> Dataset:
    path = str(path)
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read dataset {path}: {exc}") from exc
    return parse_dataset_text(text, source=path)


def parse_adjacency_text(text: str, source="<memory>") -> SparsePrecision:
    """Parse an edge-list adjacency file into a 0/1 symmetric matrix."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [(k, ln) for k, ln in enumerate(lines, start=1) if ln]
    if not lines:
        raise ParseError(f"{source}: empty adjacency file")
    first_no, first = lines[0]
    try:
        n = int(first)
    except ValueError:
        raise ParseError(
            f"{source}: line {first_no}: expected the node count, got "
            f"{first!r}") from None
    if n < 1:
        raise ParseError(f"{source}: node count must be positive, got {n}")
    seen = set()
    rows, cols = [], []
    for line_no, ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise ParseError(
                f"{source}: line {line_no}: expected 'i j', got {ln!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(
                f"{source}: line {line_no}: indices must be integers") from None
        if not (0 <= i < n and 0 <= j < n):
            raise ParseError(
                f"{source}: line {line_no}: index out of range for n={n}")
        if i == j:
            raise ParseError(f"{source}: line {line_no}: self-loop {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ParseError(
                f"{source}: line {line_no}: duplicate edge {i} {j}")
        seen.add(key)
        rows.append(key[0])
        cols.append(key[1])
    if not rows:
        raise ParseError(f"{source}: adjacency lists no edges")
    return SparsePrecision(n, np.asarray(rows, dtype=np.int64),
                           np.asarray(cols, dtype=np.int64),
                           np.ones(len(rows)))


def load_adjacency(path) -> SparsePrecision:
    path = str(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read adjacency {path}: {exc}") from exc
    return parse_adjacency_text(text, source=path)
