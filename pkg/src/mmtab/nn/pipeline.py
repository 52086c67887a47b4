"""Raw-table front end for the fusion networks.

``FusionModel`` owns everything between a raw :class:`DataTable` and the
network: modality inference, preprocessing, vocabulary, field merging, label
encoding and target scaling.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import textprep
from ..evalkit import safe_scorer
from ..frame import (BINARY, REGRESSION, DataTable, FeatureSchema, LabelEncoder, SplitSpec, fit_transform, infer_schema,
                     split_train_val)
from .model import ALL_TEXT, FUSE_EARLY, FUSE_LATE, TEXT_ONLY, NetConfig, TrainedNet, build_net, embed
from .train import EncodedRows, TrainConfig, predict_rows, train

# Desk-scale defaults for a network trained from scratch (no pretrained weights).
DESK_NET = dict(hidden_size=32, n_layers=2, n_heads=4, ffn_size=64)
DESK_TRAIN = TrainConfig(peak_lr=2e-3, batch_size=32, epochs=10)


@dataclass(frozen=True)
class NetSpec:
    variant: str = FUSE_LATE
    net: dict = field(default_factory=lambda: dict(DESK_NET))
    train: TrainConfig = DESK_TRAIN
    vocab_size: int = 5000
    max_length: int = 512
    internal_val_fraction: float = 0.1

    def with_train(self, **kw) -> "NetSpec":
        return replace(self, train=replace(self.train, **kw))


class FusionModel:
    """Fit/predict/embed a fusion network directly on raw tables."""

    kind = "fusion_net"

    def __init__(self, spec: NetSpec | None = None, seed: int = 0):
        self.spec = spec or NetSpec()
        self.seed = seed
        self.schema: FeatureSchema | None = None
        self.vocab: textprep.Vocab | None = None
        self.net: TrainedNet | None = None
        self.label_encoder: LabelEncoder | None = None
        self.task: str | None = None
        self.y_scale = (0.0, 1.0)

    # -- column roles
    @property
    def text_columns(self) -> list[str]:
        return self.schema.text

    @property
    def tab_columns(self) -> tuple[list[str], list[str]]:
        return self.schema.numeric, self.schema.categorical

    def _field_columns(self) -> tuple[list[str], list[str]]:
        """(genuine text columns, tabular columns rendered as text)."""
        if self.spec.variant == ALL_TEXT:
            num, cat = self.tab_columns
            return self.text_columns, [c for c in self.schema.assignments if c in set(num) | set(cat)]
        return self.text_columns, []

    def _fields(self, raw: DataTable, processed: DataTable) -> list[list[list[int]]]:
        text_cols, str_cols = self._field_columns()
        per_col = [[textprep.tokenize(s, self.vocab) for s in processed.column(c)] for c in text_cols]
        if str_cols:
            rendered = textprep.stringify_columns(raw, self.schema, str_cols)
            for j in range(len(str_cols)):
                per_col.append([textprep.tokenize(r[j], self.vocab) for r in rendered])
        return [[col[i] for col in per_col] for i in range(raw.n_rows)]

    def _corpus(self, raw: DataTable, processed: DataTable) -> list[str]:
        text_cols, str_cols = self._field_columns()
        docs = [s for c in text_cols for s in processed.column(c)]
        if str_cols:
            docs.extend(x for r in textprep.stringify_columns(raw, self.schema, str_cols) for x in r)
        return docs or [""]

    def encode(self, table: DataTable, with_target: bool = True) -> EncodedRows:
        processed = fit_transform(self.schema, _features_only(table), fit=False)
        fields = self._fields(table, processed)
        merged = [textprep.merge_fields(f, self.spec.max_length) for f in fields]
        use_tab = self.spec.variant in (FUSE_EARLY, FUSE_LATE)
        num, cat = self.tab_columns
        n = table.n_rows
        numeric = np.column_stack([processed.column(c) for c in num]) if use_tab and num else np.zeros((n, 0))
        categorical = (np.column_stack([processed.column(c) for c in cat]).astype(np.int64) if use_tab and cat
                       else np.zeros((n, 0), dtype=np.int64))
        y = None
        if with_target and table.target is not None:
            y = self.label_encoder.transform(table.labels())
            if self.task == REGRESSION:
                y = (y - self.y_scale[0]) / self.y_scale[1]
        return EncodedRows(merged, numeric, categorical, y)

    def _config(self, train_table: DataTable) -> NetConfig:
        num, cat = self.tab_columns
        use_tab = self.spec.variant in (FUSE_EARLY, FUSE_LATE)
        text_cols, str_cols = self._field_columns()
        n_fields = len(text_cols) + len(str_cols)
        if n_fields == 0:
            raise ValueError(f"variant {self.spec.variant!r} needs at least one text field")
        out = 1 if self.task in (BINARY, REGRESSION) else self.label_encoder.n_classes
        return NetConfig(variant=self.spec.variant, vocab_size=self.spec.vocab_size + len(textprep.RESERVED),
                         max_length=self.spec.max_length, n_numeric=len(num) if use_tab else 0,
                         cat_cardinalities=tuple(len(self.schema.categorical_vocab[c]) for c in cat) if use_tab else (),
                         n_text_fields=n_fields, output_dim=out, **self.spec.net)

    def prepare(self, train_table: DataTable, task: str | None = None, schema: FeatureSchema | None = None,
                classes=None):
        """Fit preprocessing, vocabulary and an untrained network."""
        self.task = task or train_table.task
        features = _features_only(train_table)
        base = schema if schema is not None else infer_schema(features)
        processed = fit_transform(base, features, fit=True)
        self.schema = processed.schema
        self.vocab = textprep.build_vocab(self._corpus(train_table, processed), self.spec.vocab_size)
        self.label_encoder = (LabelEncoder(self.task, classes) if classes is not None
                              else LabelEncoder.fit(train_table.labels(), self.task))
        if self.task == REGRESSION:
            y = self.label_encoder.transform(train_table.labels())
            std = float(y.std()) or 1.0
            self.y_scale = (float(y.mean()), std)
        # the embedding table is sized by the vocabulary cap, not the fitted vocabulary,
        # so an untrained encoder is identical across datasets for a given seed
        self.net = build_net(self._config(train_table), None, seed=self.seed)
        return self

    def fit(self, train_table: DataTable, val_table: DataTable | None = None, task: str | None = None,
            schema: FeatureSchema | None = None, classes=None) -> "FusionModel":
        task = task or train_table.task
        if classes is None and task != REGRESSION:
            classes = LabelEncoder.fit(train_table.labels(), task).classes
        if val_table is None or val_table.n_rows == 0:
            train_table, val_table = split_train_val(
                train_table, SplitSpec(self.spec.internal_val_fraction, self.seed, stratify=True))
        self.prepare(train_table, task, schema, classes)
        cfg = replace(self.spec.train, seed=self.seed)
        train(self.net, self.encode(train_table), self.encode(val_table), cfg, safe_scorer(task), task)
        return self

    def predict(self, table: DataTable) -> np.ndarray:
        rows = self.encode(table, with_target=False)
        out = predict_rows(self.net, rows, self.task)
        if self.task == REGRESSION:
            out = out * self.y_scale[1] + self.y_scale[0]
        return out

    def embed(self, table: DataTable, batch_size: int = 256) -> np.ndarray:
        rows = self.encode(table, with_target=False)
        outs = [embed(self.net, rows.batch(np.arange(s, min(s + batch_size, len(rows)))))
                for s in range(0, len(rows), batch_size)]
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.net.config.embed_width))


def _features_only(table: DataTable) -> DataTable:
    return table.drop([table.target]) if table.target is not None else table


__all__ = ["FusionModel", "NetSpec", "DESK_NET", "DESK_TRAIN", "TEXT_ONLY", "ALL_TEXT", "FUSE_EARLY", "FUSE_LATE"]
