"""Raw table -> design matrix for the tabular model zoo."""
from __future__ import annotations

import numpy as np

from ..errors import SchemaMismatchError
from ..frame import NUMERIC, DataTable, FeatureSchema, fit_transform, infer_schema, parse_float


def signature_of(table: DataTable, schema: FeatureSchema) -> tuple[tuple[str, str], ...]:
    return tuple((c, schema.assignments[c]) for c in table.feature_names)


class TabularEncoder:
    """Standardized numerics followed by categorical vocabulary indices.

    Text columns are rejected: they must be featurized (n-grams, embeddings)
    or dropped before a tabular model sees the table.
    """

    def __init__(self, ignore_text: bool = False):
        self.ignore_text = ignore_text
        self.ignored: list[str] = []
        self.schema: FeatureSchema | None = None
        self.signature: tuple = ()

    def fit(self, table: DataTable, schema: FeatureSchema | None = None) -> "TabularEncoder":
        features = table.drop([table.target]) if table.target is not None else table
        schema = schema if schema is not None else infer_schema(features)
        if schema.text and self.ignore_text:
            self.ignored = schema.text
            features = features.drop(self.ignored)
            schema = schema.with_assignments({c: k for c, k in schema.assignments.items() if c not in self.ignored})
        if schema.text:
            raise ValueError(f"tabular models cannot consume text columns {schema.text}; featurize them first")
        self.schema = fit_transform(schema, features, fit=True).schema
        self.signature = signature_of(features, self.schema)
        return self

    @property
    def numeric(self) -> list[str]:
        return self.schema.numeric

    @property
    def categorical(self) -> list[str]:
        return self.schema.categorical

    @property
    def cardinalities(self) -> list[int]:
        return [len(self.schema.categorical_vocab[c]) for c in self.categorical]

    def _strip(self, table: DataTable) -> DataTable:
        return table.drop([c for c in self.ignored if c in table]) if self.ignored else table

    def check(self, table: DataTable) -> None:
        table = self._strip(table)
        expected = dict(self.signature)
        got = table.feature_names
        extra = sorted(set(got) - set(expected))
        absent = sorted(set(expected) - set(got))
        wrong = []
        for c in got:
            arr = table.column(c)
            if expected.get(c) == NUMERIC and arr.dtype != np.float64 and _has_non_numeric(arr):
                wrong.append(c)
        if extra or absent or wrong:
            raise SchemaMismatchError(f"feature signature mismatch: unexpected {extra}, absent {absent}, "
                                      f"wrong modality {wrong}")

    def transform(self, table: DataTable) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, is_cat) with numeric columns first."""
        self.check(table)
        table = self._strip(table)
        features = table.drop([table.target]) if table.target is not None else table
        t = fit_transform(self.schema, features, fit=False)
        cols = [t.column(c).astype(np.float64) for c in self.numeric + self.categorical]
        X = np.column_stack(cols) if cols else np.zeros((table.n_rows, 0))
        is_cat = np.array([False] * len(self.numeric) + [True] * len(self.categorical), dtype=bool)
        return X, is_cat


def _has_non_numeric(arr) -> bool:
    return any(v is not None and parse_float(v) is None for v in arr.tolist())


def one_hot(X: np.ndarray, is_cat: np.ndarray, cardinalities) -> np.ndarray:
    parts = [X[:, ~is_cat]]
    for j, card in zip(np.flatnonzero(is_cat), cardinalities):
        parts.append(np.eye(card)[X[:, j].astype(np.int64)])
    return np.concatenate(parts, axis=1)
