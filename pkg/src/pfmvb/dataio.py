"""CSV ingestion, feature construction and CSV output."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConstantPredictor, DataError, MissingColumn, NonBinaryResponse, ParseError
from .linalg import Dataset, Standardization

INTERCEPT = "(Intercept)"


@dataclass
class Table:
    header: list
    values: np.ndarray
    lines: np.ndarray

    def column(self, name):
        try:
            return self.values[:, self.header.index(name)]
        except ValueError:
            shown = ", ".join(self.header[:8]) + (", ..." if len(self.header) > 8 else "")
            raise MissingColumn(f"column {name!r} not found; available: {shown}") from None


def read_table(path) -> Table:
    """Read a numeric CSV with a header row.

    Blank lines are skipped.  Every other record must have one field per
    header entry and parse as a float; failures raise :class:`ParseError`
    with the 1-based line number of the offending record.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected a header row", 1) from None
        except csv.Error as exc:
            raise ParseError(str(exc), reader.line_num) from None
        header = [h.strip() for h in header]
        if not any(header):
            raise ParseError("header row is empty", reader.line_num)
        dup = [h for h in set(header) if header.count(h) > 1]
        if dup:
            raise ParseError(f"duplicate column names {sorted(dup)}", reader.line_num)
        rows, lines = [], []
        while True:
            try:
                rec = next(reader)
            except StopIteration:
                break
            except csv.Error as exc:
                raise ParseError(str(exc), reader.line_num) from None
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(rec)}", reader.line_num)
            try:
                rows.append([float(f) for f in rec])
            except ValueError as exc:
                raise ParseError(f"non-numeric field ({exc})", reader.line_num) from None
            lines.append(reader.line_num)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return Table(header, values, np.array(lines, dtype=int))


@dataclass(frozen=True)
class FeatureMap:
    """How raw CSV columns become the design matrix.

    Main effects come first, then (optionally) all pairwise products in the
    order (a, b) with a before b, then standardization, then the intercept.
    """

    raw_columns: tuple
    pairwise: bool = False
    intercept: bool = True
    standardization: Standardization | None = None

    @property
    def feature_names(self):
        names = list(self.raw_columns)
        if self.pairwise:
            names += [f"{a}:{b}" for a, b in itertools.combinations(self.raw_columns, 2)]
        return names

    @property
    def columns(self):
        return ([INTERCEPT] if self.intercept else []) + self.feature_names

    def expand(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        if not self.pairwise or raw.shape[1] < 2:
            return raw
        pairs = [raw[:, a] * raw[:, b] for a, b in itertools.combinations(range(raw.shape[1]), 2)]
        return np.column_stack([raw] + pairs)

    def design(self, raw):
        Z = self.expand(raw)
        if self.standardization is not None:
            Z = self.standardization.transform(Z)
        if self.intercept:
            Z = np.column_stack([np.ones(Z.shape[0]), Z])
        return Z

    def design_from_table(self, table: Table):
        raw = np.column_stack([table.column(c) for c in self.raw_columns]) if self.raw_columns \
            else np.empty((table.values.shape[0], 0))
        if not np.all(np.isfinite(raw)):
            bad = int(table.lines[np.flatnonzero(~np.all(np.isfinite(raw), axis=1))[0]])
            raise ParseError("non-finite predictor value", bad)
        return self.design(raw)

    def to_dict(self):
        return {"raw_columns": list(self.raw_columns), "pairwise": self.pairwise, "intercept": self.intercept,
                "standardization": None if self.standardization is None else self.standardization.to_dict()}

    @classmethod
    def from_dict(cls, d):
        std = d.get("standardization")
        return cls(tuple(d["raw_columns"]), bool(d["pairwise"]), bool(d["intercept"]),
                   None if std is None else Standardization.from_dict(std))


def binary_response(values, name, lines=None):
    y = np.asarray(values, dtype=np.float64)
    bad = np.flatnonzero(~((y == 0) | (y == 1)))
    if bad.size:
        where = f" (line {int(lines[bad[0]])})" if lines is not None else ""
        raise NonBinaryResponse(f"response {name!r} must be 0/1, found {y[bad[0]]!r}{where}")
    return y


def ingest_table(table: Table, response_column: str, standardize: bool = True, add_intercept: bool = True,
                 pairwise_interactions: bool = False):
    """Turn a parsed table into ``(Dataset, FeatureMap)``.

    A column named ``(Intercept)`` holding only ones is treated as an existing
    intercept, which makes written datasets re-ingestible unchanged.
    """
    y = binary_response(table.column(response_column), response_column, table.lines)
    if y.size == 0:
        raise DataError("no data rows")
    raw_cols = [c for c in table.header if c != response_column]
    intercept = add_intercept
    if INTERCEPT in raw_cols:
        if not np.all(table.column(INTERCEPT) == 1.0):
            raise DataError(f"column {INTERCEPT!r} is reserved for a column of ones")
        raw_cols.remove(INTERCEPT)
        intercept = True
    fmap = FeatureMap(tuple(raw_cols), pairwise_interactions, intercept)
    Z = fmap.expand(np.column_stack([table.column(c) for c in raw_cols]) if raw_cols else np.empty((y.size, 0)))
    if not np.all(np.isfinite(Z)):
        bad = int(table.lines[np.flatnonzero(~np.all(np.isfinite(Z), axis=1))[0]])
        raise ParseError("non-finite predictor value", bad)
    names = fmap.feature_names
    for j, name in enumerate(names):
        if np.all(Z[:, j] == Z[0, j]):
            raise ConstantPredictor(name)
    if not intercept and not names:
        raise DataError("no predictors left after removing the response")
    std = None
    if standardize:
        if y.size < 2:
            raise DataError("standardization needs at least two rows")
        std = Standardization.fit(Z, names)
        fmap = FeatureMap(fmap.raw_columns, fmap.pairwise, fmap.intercept, std)
    X = fmap.design(np.column_stack([table.column(c) for c in raw_cols]) if raw_cols else np.empty((y.size, 0)))
    data = Dataset(y, X, columns=fmap.columns, standardization=std, intercept=intercept)
    return data, fmap


def ingest_csv(path, response_column: str, standardize: bool = True, add_intercept: bool = True,
               pairwise_interactions: bool = False) -> Dataset:
    """Read a CSV into a :class:`Dataset`.

    Predictors are every column except the response.  With ``standardize``
    each (interaction-expanded) predictor is centered and scaled to sample sd
    0.5, and the fitted map is kept on ``Dataset.standardization``.
    """
    data, _ = ingest_table(read_table(path), response_column, standardize, add_intercept, pairwise_interactions)
    return data


def write_csv(path, data: Dataset, response_column: str = "y"):
    """Write ``y`` and every column of ``X`` using round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        write_matrix(fh, [response_column] + list(data.columns), np.column_stack([data.y, data.X]))


def write_matrix(fh, header, values):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in np.asarray(values, dtype=np.float64):
        writer.writerow([repr(float(v)) for v in row])
