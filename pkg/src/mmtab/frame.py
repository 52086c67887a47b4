"""Column-typed tables, modality inference, preprocessing and splitting."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CsvParseError, MmtabWarning, SchemaError, SchemaMismatchError

NUMERIC = "numeric"
CATEGORICAL = "categorical"
TEXT = "text"
MODALITIES = (NUMERIC, CATEGORICAL, TEXT)

BINARY = "binary"
MULTICLASS = "multiclass"
REGRESSION = "regression"
TASKS = (BINARY, MULTICLASS, REGRESSION)

UNKNOWN = "__unknown__"
NUMERIC_PARSE_FRACTION = 0.99


# -- cells -----------------------------------------------------------------

@dataclass(frozen=True)
class Numeric:
    value: float


@dataclass(frozen=True)
class Categorical:
    value: str


@dataclass(frozen=True)
class Text:
    value: str


class _MissingType:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Missing"

    def __bool__(self):
        return False


Missing = _MissingType()


def parse_float(s) -> float | None:
    """Parse a CSV field as a finite float, or None."""
    if s is None:
        return None
    if isinstance(s, (int, float, np.integer, np.floating)):
        v = float(s)
    else:
        s = str(s).strip()
        if not s:
            return None
        try:
            v = float(s.replace(",", "")) if s.count(",") and _looks_grouped(s) else float(s)
        except ValueError:
            return None
    return v if math.isfinite(v) else None


def _looks_grouped(s: str) -> bool:
    # "1,234.5" style thousands separators
    head = s.lstrip("+-").split(".")[0]
    parts = head.split(",")
    return len(parts) > 1 and 1 <= len(parts[0]) <= 3 and all(len(p) == 3 and p.isdigit() for p in parts[1:])


def _as_str_array(values) -> np.ndarray:
    out = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        if v is None or v is Missing:
            out[i] = None
        elif isinstance(v, float) and not math.isfinite(v):
            out[i] = None
        elif isinstance(v, str):
            out[i] = v if v != "" else None
        elif isinstance(v, (float, np.floating)):
            out[i] = format(float(v), "g")
        else:
            out[i] = str(v)
    return out


def _as_float_array(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind in "fiub":
        arr = arr.astype(np.float64)
    else:
        arr = np.array([np.nan if (p := parse_float(v)) is None else p for v in values], dtype=np.float64)
    arr = arr.copy()
    arr[~np.isfinite(arr)] = np.nan
    return arr


def _normalize_column(values, kind: str | None) -> np.ndarray:
    if isinstance(values, np.ndarray) and values.dtype.kind in "iu" and kind == CATEGORICAL:
        return values.astype(np.int64)
    if kind == NUMERIC:
        return _as_float_array(values)
    if kind in (CATEGORICAL, TEXT):
        return _as_str_array(values)
    arr = values if isinstance(values, np.ndarray) else None
    if arr is not None and arr.dtype.kind in "fiub":
        return _as_float_array(arr)
    if arr is None and all(isinstance(v, (int, float)) and not isinstance(v, bool) or v is None for v in values):
        return _as_float_array([np.nan if v is None else v for v in values])
    return _as_str_array(values)


# -- table -----------------------------------------------------------------

class DataTable:
    """Immutable column-oriented table.

    Numeric columns are float64 arrays with NaN marking missing cells; string
    columns are object arrays holding ``str`` or ``None``; encoded categorical
    columns (after :func:`fit_transform`) are int64 vocabulary indices.
    """

    def __init__(self, columns: Mapping[str, Sequence], *, name: str = "table",
                 target: str | None = None, task: str | None = None,
                 kinds: Mapping[str, str | None] | None = None, schema: "FeatureSchema | None" = None):
        kinds = dict(kinds or {})
        for col, kind in kinds.items():
            if kind is not None and kind not in MODALITIES:
                raise SchemaError(f"unknown modality {kind!r} for column {col!r}")
        names = list(columns)
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        cols: dict[str, np.ndarray] = {}
        n = None
        for col in names:
            if col == target:
                arr = _normalize_target(columns[col], task)
            else:
                arr = _normalize_column(columns[col], kinds.get(col))
            arr.flags.writeable = False
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise SchemaError(f"column {col!r} has {len(arr)} cells, expected {n}")
            cols[col] = arr
        if target is not None and target not in cols:
            raise SchemaError(f"target {target!r} is not a column")
        if task is not None and task not in TASKS:
            raise SchemaError(f"unknown task {task!r}")
        self._cols = cols
        self.name = name
        self.target = target
        self.task = task
        self.kinds = {c: kinds.get(c) for c in names}
        self.schema = schema
        self.n_rows = 0 if n is None else n

    # basic access
    @property
    def column_names(self) -> list[str]:
        return list(self._cols)

    @property
    def feature_names(self) -> list[str]:
        return [c for c in self._cols if c != self.target]

    def column(self, name: str) -> np.ndarray:
        try:
            return self._cols[name]
        except KeyError:
            raise KeyError(f"no column {name!r} in table {self.name!r}") from None

    __getitem__ = column

    def __contains__(self, name) -> bool:
        return name in self._cols

    def __len__(self) -> int:
        return self.n_rows

    def __repr__(self):
        return f"DataTable({self.name!r}, rows={self.n_rows}, columns={self.column_names})"

    def cell(self, row: int, name: str):
        arr = self.column(name)
        v = arr[row]
        kind = self.kinds.get(name)
        if arr.dtype == np.float64:
            return Missing if np.isnan(v) else Numeric(float(v))
        if arr.dtype.kind == "i":
            return Categorical(int(v))
        if v is None:
            return Missing
        if kind == CATEGORICAL:
            return Categorical(v)
        return Text(v)

    def _replace(self, cols: Mapping[str, np.ndarray], kinds=None, **meta) -> "DataTable":
        out = DataTable.__new__(DataTable)
        out._cols = dict(cols)
        for arr in out._cols.values():
            arr.flags.writeable = False
        out.name = meta.get("name", self.name)
        out.target = meta.get("target", self.target)
        out.task = meta.get("task", self.task)
        base_kinds = self.kinds if kinds is None else kinds
        out.kinds = {c: base_kinds.get(c) for c in out._cols}
        out.schema = meta.get("schema", self.schema)
        out.n_rows = len(next(iter(out._cols.values()))) if out._cols else 0
        if out.target is not None and out.target not in out._cols:
            out.target = None
        return out

    def take(self, indices) -> "DataTable":
        idx = np.asarray(indices, dtype=np.int64)
        return self._replace({c: a[idx] for c, a in self._cols.items()})

    def select(self, names: Iterable[str]) -> "DataTable":
        names = list(names)
        if self.target is not None and self.target not in names:
            names.append(self.target)
        return self._replace({c: self.column(c) for c in names})

    def drop(self, names: Iterable[str]) -> "DataTable":
        gone = set(names)
        return self._replace({c: a for c, a in self._cols.items() if c not in gone})

    def with_column(self, name: str, values, kind: str | None = None) -> "DataTable":
        arr = _normalize_column(values, kind)
        if len(arr) != self.n_rows:
            raise SchemaError(f"column {name!r} has {len(arr)} cells, expected {self.n_rows}")
        cols = dict(self._cols)
        cols[name] = arr
        kinds = dict(self.kinds)
        kinds[name] = kind
        return self._replace(cols, kinds=kinds)

    def with_values(self, name: str, values: np.ndarray) -> "DataTable":
        """Replace an existing column's array without re-normalizing it."""
        old = self.column(name)
        arr = np.asarray(values, dtype=old.dtype)
        if arr.shape != old.shape:
            raise SchemaError(f"column {name!r} must keep shape {old.shape}")
        cols = dict(self._cols)
        cols[name] = arr
        return self._replace(cols)

    def with_kinds(self, kinds: Mapping[str, str | None]) -> "DataTable":
        merged = dict(self.kinds)
        merged.update(kinds)
        return self._replace(self._cols, kinds=merged)

    def with_meta(self, **meta) -> "DataTable":
        return self._replace(self._cols, **meta)

    def labels(self) -> np.ndarray:
        if self.target is None:
            raise SchemaError(f"table {self.name!r} has no target column")
        return self._cols[self.target]


def _normalize_target(values, task):
    if task == REGRESSION:
        return _as_float_array(values)
    arr = np.asarray(values)
    if arr.dtype.kind in "iu":
        return arr.astype(np.int64)
    if arr.dtype.kind == "f":
        if np.all(np.isfinite(arr)) and np.all(arr == np.round(arr)):
            return arr.astype(np.int64)
        return arr.astype(np.float64)
    return _as_str_array(values)


def concat_tables(tables: Sequence[DataTable]) -> DataTable:
    first = tables[0]
    cols = {c: np.concatenate([t.column(c) for t in tables]) for c in first.column_names}
    return first._replace(cols)


class LabelEncoder:
    """Maps raw target values to class indices (classification) or floats."""

    def __init__(self, task: str, classes=None):
        self.task = task
        self.classes = None if classes is None else list(classes)

    @classmethod
    def fit(cls, y, task: str) -> "LabelEncoder":
        if task == REGRESSION:
            return cls(task)
        vals = [v for v in np.asarray(y, dtype=object).tolist() if v is not None]
        classes = sorted(set(vals), key=lambda v: (str(type(v)), v))
        if task == BINARY and len(classes) > 2:
            raise SchemaError(f"binary task with {len(classes)} classes")
        return cls(task, classes)

    @property
    def n_classes(self) -> int:
        return 0 if self.classes is None else len(self.classes)

    def transform(self, y) -> np.ndarray:
        if self.task == REGRESSION:
            out = _as_float_array(y)
            if np.isnan(out).any():
                raise SchemaError("regression target contains missing values")
            return out
        lookup = {c: i for i, c in enumerate(self.classes)}
        try:
            return np.array([lookup[v] for v in np.asarray(y, dtype=object).tolist()], dtype=np.int64)
        except KeyError as exc:
            raise SchemaError(f"unseen class label {exc.args[0]!r}") from None


# -- CSV -------------------------------------------------------------------

def load_type_overrides(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or any(v not in MODALITIES for v in data.values()):
        raise SchemaError(f"type override file {path} must map column names to one of {MODALITIES}")
    return data


def read_csv(path, type_overrides: Mapping[str, str] | None = None, *, target: str | None = None,
             task: str | None = None, name: str | None = None) -> DataTable:
    """Read an RFC-4180 CSV with a mandatory header row.

    Empty fields become missing.  A column whose non-empty fields parse as
    numbers (at least 99% of them) is loaded as numeric and the stragglers are
    set missing; overridden columns skip that detection.
    """
    overrides = dict(type_overrides or {})
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("empty file, header row required", row=1) from None
        except csv.Error as exc:
            raise CsvParseError(str(exc), row=1) from None
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise SchemaError(f"duplicate header names: {dupes}")
        rows = []
        while True:
            try:
                rec = next(reader)
            except StopIteration:
                break
            except csv.Error as exc:
                raise CsvParseError(str(exc), row=reader.line_num) from None
            if not rec:
                continue
            if len(rec) != len(header):
                raise CsvParseError(f"expected {len(header)} fields, got {len(rec)}", row=reader.line_num)
            rows.append(rec)
    for col in overrides:
        if col not in header:
            raise SchemaError(f"type override for unknown column {col!r}")
    cols = {}
    kinds = {}
    for j, col in enumerate(header):
        raw = [r[j] if r[j] != "" else None for r in rows]
        if col == target:
            cols[col] = raw if task != REGRESSION else [parse_float(v) for v in raw]
            continue
        kind = overrides.get(col)
        if kind is None and _numeric_fraction(raw) >= NUMERIC_PARSE_FRACTION:
            kind_for_storage = NUMERIC
        else:
            kind_for_storage = kind
        cols[col] = _normalize_column(raw, kind_for_storage)
        kinds[col] = kind
    if target is not None and target not in cols:
        raise SchemaError(f"target {target!r} is not a column of {path}")
    if target is not None and task != REGRESSION:
        cols[target] = _coerce_labels(cols[target])
    return DataTable(cols, name=name or path.stem, target=target, task=task, kinds=kinds)


def _coerce_labels(raw):
    nums = [parse_float(v) for v in raw]
    if all(v is not None and v == int(v) for v in nums):
        return np.array([int(v) for v in nums], dtype=np.int64)
    return _as_str_array(raw)


def _numeric_fraction(values) -> float:
    present = [v for v in values if v is not None]
    if not present:
        return 0.0
    ok = sum(parse_float(v) is not None for v in present)
    return ok / len(present)


def write_csv(table: DataTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(table.column_names)
        cols = [table.column(c) for c in table.column_names]
        for i in range(table.n_rows):
            w.writerow([_render_csv(c[i]) for c in cols])


def _render_csv(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


# -- schema ----------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSchema:
    assignments: dict[str, str]
    categorical_vocab: dict[str, tuple[str, ...]] = field(default_factory=dict)
    numeric_stats: dict[str, tuple[float, float]] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def columns(self, modality: str) -> list[str]:
        return [c for c, m in self.assignments.items() if m == modality]

    @property
    def numeric(self) -> list[str]:
        return self.columns(NUMERIC)

    @property
    def categorical(self) -> list[str]:
        return self.columns(CATEGORICAL)

    @property
    def text(self) -> list[str]:
        return self.columns(TEXT)

    def unknown_index(self, col: str) -> int:
        return len(self.categorical_vocab[col]) - 1

    def with_assignments(self, assignments: Mapping[str, str]) -> "FeatureSchema":
        return FeatureSchema(dict(assignments), self.categorical_vocab, self.numeric_stats, self.warnings)

    def to_json(self) -> dict:
        return {"assignments": self.assignments,
                "categorical_vocab": {k: list(v) for k, v in self.categorical_vocab.items()},
                "numeric_stats": {k: list(v) for k, v in self.numeric_stats.items()}}


def _column_strings(arr: np.ndarray) -> list:
    if arr.dtype == np.float64:
        return [None if np.isnan(v) else format(float(v), "g") for v in arr]
    return list(arr)


def _numeric_values(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.float64:
        return arr
    return np.array([np.nan if (p := parse_float(v)) is None else p for v in arr], dtype=np.float64)


def _numeric_stats(values: np.ndarray) -> tuple[float, float]:
    present = values[~np.isnan(values)]
    if present.size == 0:
        return 0.0, 1.0
    mean = float(present.mean())
    std = float(np.sqrt(np.mean((present - mean) ** 2)))
    # spreads that underflow (e.g. subnormal differences) count as constant
    return mean, std if std > 0 and np.isfinite(std) else 1.0


def _vocab(strings) -> tuple[str, ...]:
    cats = sorted({s for s in strings if s is not None and s != UNKNOWN})
    return tuple(cats) + (UNKNOWN,)


def infer_schema(table: DataTable, categorical_threshold: int = 20) -> FeatureSchema:
    """Assign a modality to every feature column and gather its statistics.

    Numeric if at least 99% of non-missing cells parse as floats; otherwise
    categorical when the column has at most ``categorical_threshold`` distinct
    values, else text.  Columns with a declared kind keep it.
    """
    if table.n_rows == 0:
        raise SchemaError("cannot infer a schema from an empty table")
    assignments, vocab, stats, notes = {}, {}, {}, []
    for col in table.feature_names:
        arr = table.column(col)
        declared = table.kinds.get(col)
        if arr.dtype.kind == "i":
            raise SchemaError(f"column {col!r} is already encoded; infer the schema on the raw table")
        strings = _column_strings(arr)
        n_present = sum(s is not None for s in strings)
        if declared is None and n_present == 0:
            assignments[col] = CATEGORICAL
            vocab[col] = (UNKNOWN,)
            notes.append(f"column {col!r} is entirely missing; treated as categorical with only Unknown")
            continue
        if declared is not None:
            kind = declared
        elif arr.dtype == np.float64 or _numeric_fraction(strings) >= NUMERIC_PARSE_FRACTION:
            kind = NUMERIC
        else:
            distinct = len({s for s in strings if s is not None})
            kind = CATEGORICAL if distinct <= categorical_threshold else TEXT
        assignments[col] = kind
        if kind == NUMERIC:
            stats[col] = _numeric_stats(_numeric_values(arr))
        elif kind == CATEGORICAL:
            vocab[col] = _vocab(strings)
    return FeatureSchema(assignments, vocab, stats, tuple(notes))


def refit_schema(schema: FeatureSchema, table: DataTable) -> FeatureSchema:
    """Recompute statistics and vocabularies of ``schema`` on ``table``."""
    vocab, stats = {}, {}
    for col, kind in schema.assignments.items():
        arr = table.column(col)
        if kind == NUMERIC:
            stats[col] = _numeric_stats(_numeric_values(arr))
        elif kind == CATEGORICAL:
            vocab[col] = _vocab(_column_strings(arr))
    return FeatureSchema(dict(schema.assignments), vocab, stats, schema.warnings)


def fit_transform(schema: FeatureSchema, table: DataTable, fit: bool = True) -> DataTable:
    """Standardize numerics, encode categoricals, blank out missing text.

    With ``fit=True`` statistics are recomputed from ``table``; the schema
    actually applied is attached to the result as ``.schema``.
    """
    features = set(table.feature_names)
    extra = sorted(features - set(schema.assignments))
    missing = sorted(set(schema.assignments) - features)
    if extra or missing:
        raise SchemaMismatchError(f"schema/table mismatch: unexpected columns {extra}, absent columns {missing}")
    if fit:
        schema = refit_schema(schema, table)
    cols = {}
    for col in table.column_names:
        arr = table.column(col)
        if col == table.target:
            cols[col] = arr
            continue
        kind = schema.assignments[col]
        if kind == NUMERIC:
            mean, std = schema.numeric_stats[col]
            vals = _numeric_values(arr)
            vals = np.where(np.isnan(vals), mean, vals)
            cols[col] = (vals - mean) / std
        elif kind == CATEGORICAL:
            voc = schema.categorical_vocab[col]
            lookup = {c: i for i, c in enumerate(voc[:-1])}
            unk = len(voc) - 1
            cols[col] = np.array([lookup.get(s, unk) for s in _column_strings(arr)], dtype=np.int64)
        else:
            cols[col] = np.array(["" if s is None else s for s in _column_strings(arr)], dtype=object)
    kinds = {c: schema.assignments.get(c) for c in cols}
    return table._replace(cols, kinds=kinds, schema=schema)


# -- splitting -------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    validation_fraction: float = 0.1
    seed: int = 0
    stratify: bool = True

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _largest_remainder(counts: list[int], frac: float, total: int) -> list[int]:
    quotas = [frac * c for c in counts]
    alloc = [math.floor(q) for q in quotas]
    left = total - sum(alloc)
    # stable sort keeps first-appearance order among equal remainders
    order = sorted(range(len(counts)), key=lambda i: -(quotas[i] - alloc[i]))
    for i in order[:max(left, 0)]:
        alloc[i] += 1
    return alloc


def split_indices(table: DataTable, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    n = table.n_rows
    n_val = int(round(spec.validation_fraction * n))
    n_val = min(max(n_val, 1), n - 1)
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    rng = np.random.default_rng(spec.seed)
    stratify = spec.stratify and table.target is not None and table.task in (BINARY, MULTICLASS)
    if not stratify:
        perm = rng.permutation(n)
        return np.sort(perm[n_val:]), np.sort(perm[:n_val])

    y = np.asarray(table.labels(), dtype=object)
    groups: dict = {}
    for i, v in enumerate(y.tolist()):
        groups.setdefault(v, []).append(i)
    classes = [c for c in groups if len(groups[c]) >= 2]
    singles = [groups[c][0] for c in groups if len(groups[c]) < 2]
    if singles:
        warnings.warn(f"{len(singles)} class(es) have a single row; split unstratified for those rows",
                      MmtabWarning, stacklevel=2)
    counts = [len(groups[c]) for c in classes]
    strat_total = min(max(int(round(spec.validation_fraction * sum(counts))), 0), sum(counts))
    alloc = _largest_remainder(counts, spec.validation_fraction, strat_total)
    val = []
    for c, k in zip(classes, alloc):
        rows = np.asarray(groups[c])
        val.extend(rows[rng.permutation(len(rows))[:k]].tolist())
    if singles:
        singles = np.asarray(singles)
        take = rng.random(len(singles)) < spec.validation_fraction
        val.extend(singles[take].tolist())
    val = np.sort(np.asarray(val, dtype=np.int64))
    if len(val) == 0 or len(val) == n:
        raise ValueError("validation fraction leaves one side of the split empty")
    mask = np.zeros(n, dtype=bool)
    mask[val] = True
    return np.flatnonzero(~mask), val


def split_train_val(table: DataTable, spec: SplitSpec) -> tuple[DataTable, DataTable]:
    tr, va = split_indices(table, spec)
    return table.take(tr), table.take(va)
