"""Rectangular data with missingness masks, CSV I/O and seeded RNG streams."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "NA"})
NA = "NA"


class CsvError(ValueError):
    """Malformed or empty CSV input."""


class SchemaError(ValueError):
    """Values that violate a column's declared kind."""


class ColumnKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


@dataclass(frozen=True, eq=False)
class Column:
    """One variable: values plus an observed mask (``True`` = observed).

    Missing cells hold ``nan`` in ``values``. Both arrays are read-only.
    """

    name: str
    kind: ColumnKind
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        observed = np.array(self.observed, dtype=bool)
        if values.ndim != 1 or values.shape != observed.shape:
            raise ValueError(f"column {self.name!r}: values and mask must be 1-d and equal length")
        values[~observed] = np.nan
        if not np.all(np.isfinite(values[observed])):
            raise ValueError(f"column {self.name!r}: observed values must be finite")
        kind = ColumnKind(self.kind)
        if kind is ColumnKind.BINARY:
            bad = observed & (values != 0.0) & (values != 1.0)
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise SchemaError(
                    f"column {self.name!r}: binary value {values[row]!r} at row {row}"
                )
        values.flags.writeable = False
        observed.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "kind", kind)

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_missing(self) -> int:
        return int((~self.observed).sum())


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered collection of equal-length columns with unique names."""

    columns: tuple[Column, ...]
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        columns = tuple(self.columns)
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate column names in {names}")
        lengths = {len(c) for c in columns}
        if len(lengths) > 1:
            raise ValueError(f"columns have unequal lengths {sorted(lengths)}")
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "_index", {name: j for j, name in enumerate(names)})

    @classmethod
    def from_arrays(
        cls,
        values: Mapping[str, Sequence[float]],
        kinds: Mapping[str, ColumnKind | str] | None = None,
        observed: Mapping[str, Sequence[bool]] | None = None,
    ) -> "Dataset":
        """Build a dataset from name -> values. ``nan`` marks missing unless
        an explicit ``observed`` mask is given for that column."""
        kinds = kinds or {}
        observed = observed or {}
        cols = []
        for name, vals in values.items():
            arr = np.asarray(vals, dtype=float)
            mask = np.asarray(observed[name], dtype=bool) if name in observed else ~np.isnan(arr)
            cols.append(Column(name, ColumnKind(kinds.get(name, ColumnKind.CONTINUOUS)), arr, mask))
        return cls(tuple(cols))

    @property
    def n(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown column {name!r}") from None

    def __getitem__(self, name: str) -> Column:
        return self.columns[self.index(name)]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def values_matrix(self) -> np.ndarray:
        """n x p float matrix, ``nan`` at missing cells."""
        if not self.columns:
            return np.empty((0, 0))
        return np.column_stack([c.values for c in self.columns])

    def observed_matrix(self) -> np.ndarray:
        if not self.columns:
            return np.empty((0, 0), dtype=bool)
        return np.column_stack([c.observed for c in self.columns])

    def replace(self, name: str, values: np.ndarray, observed: np.ndarray | None = None) -> "Dataset":
        """Copy with one column's values (and optionally mask) swapped out."""
        j = self.index(name)
        old = self.columns[j]
        mask = old.observed if observed is None else observed
        cols = list(self.columns)
        cols[j] = Column(old.name, old.kind, values, mask)
        return Dataset(tuple(cols))

    def with_matrix(self, values: np.ndarray, observed: np.ndarray | None = None) -> "Dataset":
        """Copy with all values replaced by an n x p matrix (same names/kinds)."""
        if observed is None:
            observed = np.ones(values.shape, dtype=bool)
        return Dataset(tuple(
            Column(c.name, c.kind, values[:, j], observed[:, j]) for j, c in enumerate(self.columns)
        ))

    def equals(self, other: "Dataset") -> bool:
        """Exact equality of names, kinds, masks and observed values."""
        if self.names != other.names:
            return False
        for a, b in zip(self.columns, other.columns):
            if a.kind is not b.kind or not np.array_equal(a.observed, b.observed):
                return False
            if not np.array_equal(a.values[a.observed], b.values[b.observed]):
                return False
        return True


def check_where(data: Dataset, where: np.ndarray) -> np.ndarray:
    """Validate a where-mask (n x p bool, True = cell is drawn by the engine)."""
    where = np.asarray(where, dtype=bool)
    if where.shape != (data.n, data.p):
        raise ValueError(f"where-mask shape {where.shape} does not match data ({data.n}, {data.p})")
    return where


# -- CSV ----------------------------------------------------------------------

def format_number(value: float) -> str:
    # 17 significant digits round-trips every double.
    return format(float(value), ".17g")


def load_csv(path: str | Path, schema: Mapping[str, ColumnKind | str] | None = None) -> Dataset:
    """Read a header-row CSV; empty fields and ``NA`` are missing.

    Columns absent from ``schema`` are continuous.
    """
    schema = dict(schema or {})
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if not header or any(h == "" for h in header):
        raise CsvError(f"{path}: header row has empty column names")
    unknown = set(schema) - set(header)
    if unknown:
        raise SchemaError(f"{path}: schema names columns not in file: {sorted(unknown)}")

    body = [r for r in rows[1:] if r]
    p = len(header)
    values = np.full((len(body), p), np.nan)
    observed = np.zeros((len(body), p), dtype=bool)
    for i, row in enumerate(body):
        if len(row) != p:
            raise CsvError(f"{path}: line {i + 2} has {len(row)} fields, expected {p}")
        for j, raw in enumerate(row):
            token = raw.strip()
            if token in MISSING_TOKENS:
                continue
            try:
                values[i, j] = float(token)
            except ValueError:
                raise CsvError(f"{path}: line {i + 2}, column {header[j]!r}: cannot parse {raw!r}") from None
            if not np.isfinite(values[i, j]):
                raise CsvError(f"{path}: line {i + 2}, column {header[j]!r}: non-finite value {raw!r}")
            observed[i, j] = True

    cols = []
    for j, name in enumerate(header):
        kind = ColumnKind(schema.get(name, ColumnKind.CONTINUOUS))
        cols.append(Column(name, kind, values[:, j], observed[:, j]))
    return Dataset(tuple(cols))


def write_csv(data: Dataset, path: str | Path) -> None:
    """Write ``data`` with missing cells as ``NA`` and 17-significant-digit numbers."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(data.names)
        for i in range(data.n):
            writer.writerow([
                format_number(c.values[i]) if c.observed[i] else NA for c in data.columns
            ])


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a generic table; floats get 17 significant digits, ``None``/nan become NA."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _cell(v) -> str:
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return NA if np.isnan(v) else format_number(v)
    return str(v)


# -- RNG streams --------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, key)``.

    The generator is PCG64 seeded from ``SeedSequence(seed, spawn_key=key)``,
    so every distinct key path yields an independent stream and identical
    ``(seed, key)`` pairs always yield identical draws.
    """

    seed: int
    key: tuple[int, ...] = ()

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key)))

    def derive_seed(self) -> int:
        """A 63-bit integer seed for code that wants a plain ``int``."""
        state = np.random.SeedSequence(self.seed, spawn_key=self.key).generate_state(2, dtype=np.uint32)
        return int((int(state[0]) << 31) ^ int(state[1]))
