"""Turn text columns into numeric columns for tabular models.

Two families: word n-gram counts, and embedding modes that replace all text
columns with the CLS vector of a network (frozen, text-fine-tuned or
multimodal-fine-tuned).
"""
from __future__ import annotations

import enum
import json
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MmtabWarning
from .frame import NUMERIC, TEXT, DataTable, FeatureSchema, infer_schema
from .nn.model import FUSE_LATE, TEXT_ONLY
from .nn.pipeline import FusionModel, NetSpec
from .textprep import split_words

NGRAM_RANGE = (1, 2, 3)


def _grams(text: str | None) -> list[str]:
    words = split_words(text)
    return [" ".join(words[i:i + n]) for n in NGRAM_RANGE for i in range(len(words) - n + 1)]


@dataclass(frozen=True)
class NgramVocab:
    """Per text column: n-gram -> dense feature index, plus document frequencies."""
    columns: dict[str, dict[str, int]]
    document_frequency: dict[str, dict[str, int]] = field(default_factory=dict)
    cap: int = 512
    min_df: int = 2

    def feature_names(self, column: str) -> list[str]:
        grams = sorted(self.columns[column], key=self.columns[column].get)
        return [f"{column}[{g}]" for g in grams]

    def to_json(self) -> str:
        return json.dumps({"cap": self.cap, "min_df": self.min_df, "columns": self.columns,
                           "document_frequency": self.document_frequency}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NgramVocab":
        d = json.loads(text)
        return cls(d["columns"], d["document_frequency"], d["cap"], d["min_df"])


def fit_ngram(train: DataTable, schema: FeatureSchema | None = None, cap: int = 512, min_df: int = 2) -> NgramVocab:
    """Keep, per text column, the ``cap`` n-grams with the highest document
    frequency among those seen in at least ``min_df`` rows (ties lexicographic)."""
    if schema is None:
        features = train.drop([train.target]) if train.target is not None else train
        schema = infer_schema(features)
    columns, dfs = {}, {}
    for col in schema.text:
        df = Counter()
        for doc in train.column(col).tolist():
            df.update(set(_grams(doc)))
        kept = sorted(((g, c) for g, c in df.items() if c >= min_df), key=lambda gc: (-gc[1], gc[0]))[:cap]
        columns[col] = {g: i for i, (g, _) in enumerate(kept)}
        dfs[col] = dict(kept)
    return NgramVocab(columns, dfs, cap, min_df)


def ngram_counts(vocab: NgramVocab, column: str, texts) -> np.ndarray:
    index = vocab.columns[column]
    out = np.zeros((len(texts), len(index)))
    for r, doc in enumerate(texts):
        for g in _grams(doc):
            j = index.get(g)
            if j is not None:
                out[r, j] += 1.0
    return out


def _replace_columns(table: DataTable, drop: list[str], new: dict[str, np.ndarray]) -> DataTable:
    cols = {c: table.column(c) for c in table.column_names if c not in set(drop)}
    target = cols.pop(table.target) if table.target is not None else None
    cols.update(new)
    if target is not None:
        cols[table.target] = target
    kinds = {c: table.kinds.get(c) for c in cols}
    kinds.update({c: NUMERIC for c in new})
    out = table._replace({c: np.asarray(v) for c, v in cols.items()}, kinds=kinds)
    return out


def ngram_transform(vocab: NgramVocab, table: DataTable) -> DataTable:
    """Replace each fitted text column by its n-gram count columns."""
    new = {}
    for col in vocab.columns:
        counts = ngram_counts(vocab, col, table.column(col).tolist())
        for name, j in zip(vocab.feature_names(col), range(counts.shape[1])):
            new[name] = counts[:, j]
    return _replace_columns(table, list(vocab.columns), new)


class EmbeddingMode(str, enum.Enum):
    PRE = "pre_embedding"
    TEXT = "text_embedding"
    MULTIMODAL = "multimodal_embedding"


@dataclass
class EmbeddingFeaturizer:
    """An embedding mode bound to its encoder network."""
    mode: EmbeddingMode
    encoder: FusionModel | None

    @classmethod
    def fit(cls, mode: EmbeddingMode | str, train: DataTable, val: DataTable | None = None,
            spec: NetSpec | None = None, seed: int = 0) -> "EmbeddingFeaturizer":
        mode = EmbeddingMode(mode)
        variant = FUSE_LATE if mode == EmbeddingMode.MULTIMODAL else TEXT_ONLY
        spec = NetSpec(variant=variant) if spec is None else replace(spec, variant=variant)
        if not text_columns_of(train):
            return cls(mode, None)
        model = FusionModel(spec, seed=seed)
        if mode == EmbeddingMode.PRE:
            model.prepare(train)    # randomly initialized and never trained
        else:
            model.fit(train, val)
        return cls(mode, model)

    @property
    def text_columns(self) -> list[str]:
        return [] if self.encoder is None else self.encoder.text_columns

    def transform(self, table: DataTable) -> DataTable:
        return embed_transform(self, table)


def embed_transform(mode: EmbeddingFeaturizer, table: DataTable) -> DataTable:
    """Replace all text columns jointly by the encoder's d embedding columns."""
    text_cols = [c for c in mode.text_columns if c in table]
    if not text_cols:
        warnings.warn(f"{mode.mode.value}: table {table.name!r} has no text columns; returned unchanged",
                      MmtabWarning, stacklevel=2)
        return table
    emb = mode.encoder.embed(table)
    new = {f"emb_{j}": emb[:, j] for j in range(emb.shape[1])}
    return _replace_columns(table, text_cols, new)


def text_columns_of(table: DataTable) -> list[str]:
    features = table.drop([table.target]) if table.target is not None else table
    return [c for c, k in infer_schema(features).assignments.items() if k == TEXT]
