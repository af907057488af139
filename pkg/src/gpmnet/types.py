"""Variable schemas, the mixed-type dataset container, and its file formats.

Two on-disk formats are supported:

* CSV with a header row of names and a second row of type tags.  A tag is
  ``c`` for a continuous column, ``d:<M>`` for a discrete column with M
  categories, or ``d:<M>:<code1>|<code2>|...`` when the category labels are
  declared explicitly.
* JSON ``{"schema": [...], "rows": [[...], ...]}`` where every schema entry
  is ``{"name", "kind", "codes"}``.

Discrete cells are stored as category indices; index 0 is the reference
category used by the discrete and mixed statistics.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent data files and tables."""


class Kind(enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: Kind
    codes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "codes", tuple(str(c) for c in self.codes))
        if self.kind is Kind.DISCRETE:
            if len(self.codes) < 2:
                raise DataError(f"discrete variable {self.name!r} needs cardinality >= 2")
            if len(set(self.codes)) != len(self.codes):
                raise DataError(f"discrete variable {self.name!r} has duplicate codes")
        elif self.codes:
            raise DataError(f"continuous variable {self.name!r} cannot declare codes")

    @property
    def is_discrete(self) -> bool:
        return self.kind is Kind.DISCRETE

    @property
    def cardinality(self) -> int | None:
        return len(self.codes) if self.is_discrete else None

    @classmethod
    def continuous(cls, name: str) -> VariableSpec:
        return cls(name, Kind.CONTINUOUS)

    @classmethod
    def discrete(cls, name: str, cardinality: int | None = None, codes=None) -> VariableSpec:
        if codes is None:
            if cardinality is None:
                raise DataError(f"discrete variable {name!r} needs a cardinality or codes")
            codes = [str(v) for v in range(cardinality)]
        elif cardinality is not None and cardinality != len(codes):
            raise DataError(f"variable {name!r}: cardinality {cardinality} != {len(codes)} codes")
        return cls(name, Kind.DISCRETE, tuple(codes))

    def tag(self) -> str:
        if not self.is_discrete:
            return "c"
        return f"d:{self.cardinality}:" + "|".join(self.codes)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind.value, "codes": list(self.codes)}

    @classmethod
    def from_dict(cls, obj: dict) -> VariableSpec:
        return cls(obj["name"], Kind(obj["kind"]), tuple(obj.get("codes", ())))


@dataclass(frozen=True)
class Schema:
    vars: tuple[VariableSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        names = [v.name for v in self.vars]
        if len(set(names)) != len(names):
            raise DataError("variable names must be unique")

    @property
    def d(self) -> int:
        return len(self.vars)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.vars]

    @property
    def discrete_mask(self) -> np.ndarray:
        return np.array([v.is_discrete for v in self.vars], dtype=bool)

    @property
    def continuous_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.vars) if not v.is_discrete]

    @property
    def discrete_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.vars) if v.is_discrete]

    def cardinality(self, i: int) -> int | None:
        return self.vars[i].cardinality

    def is_discrete(self, i: int) -> bool:
        return self.vars[i].is_discrete

    def __getitem__(self, i: int) -> VariableSpec:
        return self.vars[i]

    def __len__(self) -> int:
        return len(self.vars)

    @classmethod
    def all_continuous(cls, d: int, prefix: str = "X") -> Schema:
        return cls(tuple(VariableSpec.continuous(f"{prefix}{i}") for i in range(d)))

    def to_list(self) -> list[dict]:
        return [v.to_dict() for v in self.vars]

    @classmethod
    def from_list(cls, items: list[dict]) -> Schema:
        return cls(tuple(VariableSpec.from_dict(o) for o in items))


@dataclass(frozen=True)
class Dataset:
    """An n x d table; discrete cells hold category indices stored as floats."""

    schema: Schema
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 2:
            raise DataError("dataset values must be a 2-D table")
        if vals.shape[0] < 1:
            raise DataError("n >= 1 violated: dataset has no rows")
        if vals.shape[1] != self.schema.d:
            raise DataError(f"table has {vals.shape[1]} columns, schema has {self.schema.d}")
        bad = ~np.isfinite(vals)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DataError(f"missing or non-finite value at row {r + 1}, column {c + 1}")
        for j in self.schema.discrete_indices:
            col = vals[:, j]
            m = self.schema.cardinality(j)
            off = (col != np.round(col)) | (col < 0) | (col >= m)
            if off.any():
                r = int(np.argmax(off))
                raise DataError(
                    f"category index {col[r]!r} out of range [0, {m}) at row {r + 1}, column {j + 1}"
                )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def codes(self, j: int) -> np.ndarray:
        """Integer category indices of discrete column ``j``."""
        if not self.schema.is_discrete(j):
            raise DataError(f"column {j} is continuous")
        return self.values[:, j].astype(int)

    def take(self, rows) -> Dataset:
        return Dataset(self.schema, self.values[np.asarray(rows)])


# -- standardization ---------------------------------------------------------


@dataclass(frozen=True)
class Standardization:
    shift: np.ndarray
    scale: np.ndarray

    def apply(self, ds: Dataset) -> Dataset:
        return Dataset(ds.schema, (ds.values - self.shift) / self.scale)

    def invert(self, ds: Dataset) -> Dataset:
        return Dataset(ds.schema, ds.values * self.scale + self.shift)

    def to_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> Standardization:
        return cls(np.asarray(obj["shift"], float), np.asarray(obj["scale"], float))


def standardize(ds: Dataset) -> tuple[Dataset, Standardization]:
    """Center and scale continuous columns (population sd); discrete columns pass through."""
    shift = np.zeros(ds.d)
    scale = np.ones(ds.d)
    for j in ds.schema.continuous_indices:
        col = ds.values[:, j]
        mu = col.mean()
        sd = col.std()
        shift[j] = mu
        # constant columns are centered only
        if sd > 0 and np.isfinite(sd):
            scale[j] = sd
    rec = Standardization(shift, scale)
    return rec.apply(ds), rec


# -- parsing -----------------------------------------------------------------


def parse_tag(name: str, tag: str, column: int) -> VariableSpec:
    tag = tag.strip()
    if tag == "c":
        return VariableSpec.continuous(name)
    parts = tag.split(":", 2)
    if parts[0] != "d" or len(parts) < 2:
        raise DataError(f"column {column}: unknown type tag {tag!r} (expected 'c' or 'd:<M>')")
    try:
        m = int(parts[1])
    except ValueError:
        raise DataError(f"column {column}: bad cardinality in type tag {tag!r}") from None
    if m < 2:
        raise DataError(f"column {column}: cardinality must be >= 2, got {m}")
    if len(parts) == 3:
        codes = parts[2].split("|")
        if len(codes) != m:
            raise DataError(f"column {column}: tag {tag!r} declares {m} categories but lists {len(codes)}")
        return VariableSpec.discrete(name, m, codes)
    return VariableSpec(name, Kind.DISCRETE, tuple(str(v) for v in range(m)))


def _infer_codes(spec: VariableSpec, cells: list[str], column: int) -> VariableSpec:
    """Resolve a bare ``d:<M>`` tag: integer labels 0..M-1, else the sorted distinct labels."""
    m = spec.cardinality
    default = [str(v) for v in range(m)]
    if set(cells) <= set(default):
        return spec
    distinct = sorted(set(cells))
    if len(distinct) > m:
        # name the first cell past the declared cardinality
        seen: list[str] = []
        for r, cell in enumerate(cells):
            if cell not in seen:
                seen.append(cell)
            if len(seen) > m:
                raise DataError(
                    f"out-of-range category {cell!r} at row {r + 1}, column {column}: "
                    f"more than {m} distinct labels for a d:{m} column"
                )
    return VariableSpec.discrete(spec.name, m, distinct + [f"_unused{v}" for v in range(m - len(distinct))])


def _encode(schema: Schema, raw_rows: list[list[str]]) -> np.ndarray:
    n, d = len(raw_rows), schema.d
    out = np.empty((n, d))
    lookup = [
        {c: k for k, c in enumerate(v.codes)} if v.is_discrete else None for v in schema.vars
    ]
    for r, row in enumerate(raw_rows):
        if len(row) != d:
            raise DataError(f"row {r + 1} has {len(row)} cells, expected {d}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise DataError(f"missing value at row {r + 1}, column {j + 1}")
            if lookup[j] is None:
                try:
                    val = float(cell)
                except ValueError:
                    raise DataError(f"cannot parse {cell!r} as a number at row {r + 1}, column {j + 1}") from None
                if not math.isfinite(val):
                    raise DataError(f"non-finite value at row {r + 1}, column {j + 1}")
                out[r, j] = val
            else:
                if cell not in lookup[j]:
                    raise DataError(
                        f"out-of-range category {cell!r} at row {r + 1}, column {j + 1}; "
                        f"declared codes are {list(schema[j].codes)}"
                    )
                out[r, j] = lookup[j][cell]
    return out


def read_csv_text(text: str, schema: Schema | None = None) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError("file is empty: no header row")
    names = [c.strip() for c in rows[0]]
    body = rows[1:]
    if schema is None:
        if not body:
            raise DataError("missing type-tag row")
        tags = body[0]
        if len(tags) != len(names):
            raise DataError(f"type row has {len(tags)} tags for {len(names)} columns")
        body = body[1:]
        specs = [parse_tag(nm, tg, j + 1) for j, (nm, tg) in enumerate(zip(names, tags))]
        bare = [j for j, tg in enumerate(tags) if tg.strip().count(":") == 1]
        for j in bare:
            specs[j] = _infer_codes(specs[j], [r[j].strip() for r in body if len(r) > j], j + 1)
        schema = Schema(tuple(specs))
    else:
        if names != schema.names:
            raise DataError(f"header {names} does not match schema names {schema.names}")
        # a type row is optional when the schema is given
        if body and len(body[0]) == schema.d and all(_looks_like_tag(c) for c in body[0]):
            for j, (tg, v) in enumerate(zip(body[0], schema.vars)):
                given = parse_tag(v.name, tg, j + 1)
                if given.kind is not v.kind or (v.is_discrete and given.cardinality != v.cardinality):
                    raise DataError(f"column {j + 1}: type tag {tg!r} does not match schema")
            body = body[1:]
    if not body:
        raise DataError("n >= 1 violated: no data rows")
    return Dataset(schema, _encode(schema, body))


def _looks_like_tag(cell: str) -> bool:
    cell = cell.strip()
    return cell == "c" or cell.startswith("d:")


def load_dataset(path, schema: Schema | None = None) -> Dataset:
    """Read a dataset from CSV (two header rows) or JSON (explicit schema)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return read_json_obj(json.loads(text), schema)
    return read_csv_text(text, schema)


def read_json_obj(obj: dict, schema: Schema | None = None) -> Dataset:
    try:
        file_schema = Schema.from_list(obj["schema"])
        rows = obj["rows"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed dataset JSON: {exc}") from None
    if schema is not None and schema != file_schema:
        raise DataError("dataset JSON schema does not match the supplied schema")
    if not rows:
        raise DataError("n >= 1 violated: no data rows")
    raw = [[_cell_text(c) for c in row] for row in rows]
    return Dataset(file_schema, _encode(file_schema, raw))


def _cell_text(c) -> str:
    return repr(float(c)) if isinstance(c, float) else str(c)


def _format_row(ds: Dataset, row: np.ndarray) -> list[str]:
    out = []
    for j, v in enumerate(ds.schema.vars):
        out.append(v.codes[int(row[j])] if v.is_discrete else repr(float(row[j])))
    return out


def dumps_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ds.schema.names)
    w.writerow([v.tag() for v in ds.schema.vars])
    for row in ds.values:
        w.writerow(_format_row(ds, row))
    return buf.getvalue()


def save_dataset(ds: Dataset, path) -> None:
    """Write CSV or JSON (by suffix); floats use shortest round-trip repr."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        rows = []
        for row in ds.values:
            rows.append([
                v.codes[int(row[j])] if v.is_discrete else float(row[j])
                for j, v in enumerate(ds.schema.vars)
            ])
        path.write_text(json.dumps({"schema": ds.schema.to_list(), "rows": rows}), encoding="utf-8")
    else:
        path.write_text(dumps_csv(ds), encoding="utf-8")
