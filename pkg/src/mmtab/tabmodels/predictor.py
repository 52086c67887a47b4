"""One predictor contract over the tabular zoo: raw table in, predictions out."""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import MmtabWarning
from ..frame import BINARY, REGRESSION, DataTable, FeatureSchema, LabelEncoder
from .encode import TabularEncoder, one_hot
from .mlp import TabMLP
from .trees import PRESETS, ExtraTrees, GradientBoosting

ERT = "ert"
GBM_A = "gbm_a"
GBM_B = "gbm_b"
TAB_MLP = "tab_mlp"
TABULAR_KINDS = (ERT, GBM_A, GBM_B, TAB_MLP)


def _make(kind: str, seed: int, params: dict):
    if kind == ERT:
        return ExtraTrees(seed=seed, **params)
    if kind in (GBM_A, GBM_B):
        return GradientBoosting(PRESETS[kind[-1]], seed=seed, **params)
    if kind == TAB_MLP:
        return TabMLP(seed=seed, **params)
    raise ValueError(f"unknown tabular model kind {kind!r}")


def output_width(task: str, n_classes: int) -> int:
    return 0 if task == REGRESSION else max(n_classes, 2 if task == BINARY else 1)


class TabularPredictor:
    """Fits one tabular model on a raw (text-free) table.

    ``classes`` pins the label encoder so bagged copies trained on different
    folds agree on column order even when a fold misses a class.
    """

    def __init__(self, kind: str, seed: int = 0, ignore_text: bool = False, **params):
        if kind not in TABULAR_KINDS:
            raise ValueError(f"unknown tabular model kind {kind!r}")
        self.kind = kind
        self.seed = seed
        self.params = params
        self.ignore_text = ignore_text
        self.model = None
        self.constant: np.ndarray | float | None = None

    @property
    def signature(self):
        return self.encoder.signature

    def fit(self, table: DataTable, task: str | None = None, classes=None,
            schema: FeatureSchema | None = None) -> "TabularPredictor":
        self.task = task or table.task
        if self.task is None:
            raise ValueError("task must be given for an untyped table")
        self.encoder = TabularEncoder(self.ignore_text).fit(table, schema)
        self.label_encoder = (LabelEncoder(self.task, classes) if classes is not None
                              else LabelEncoder.fit(table.labels(), self.task))
        y = self.label_encoder.transform(table.labels())
        width = output_width(self.task, self.label_encoder.n_classes)
        if table.n_rows == 0:
            raise ValueError("cannot fit on an empty table")
        if self.task != REGRESSION and len(np.unique(y)) < 2:
            warnings.warn(f"{self.kind}: single-class target, fitting a constant predictor", MmtabWarning,
                          stacklevel=2)
            self.constant = np.eye(width)[int(y[0])]
            return self
        if self.task == REGRESSION and np.all(y == y[0]):
            warnings.warn(f"{self.kind}: constant target, fitting a constant predictor", MmtabWarning, stacklevel=2)
            self.constant = float(y[0])
            return self
        X, is_cat = self.encoder.transform(table)
        self.model = _make(self.kind, self.seed, self.params)
        if self.kind == TAB_MLP:
            self.model.fit(one_hot(X, is_cat, self.encoder.cardinalities), y, self.task, width)
        else:
            self.model.fit(X, is_cat, y, self.task, width)
        return self

    def predict(self, table: DataTable) -> np.ndarray:
        self.encoder.check(table)
        n = table.n_rows
        width = output_width(self.task, self.label_encoder.n_classes)
        if self.constant is not None:
            if self.task == REGRESSION:
                return np.full(n, self.constant)
            return np.tile(self.constant, (n, 1))
        if n == 0:
            return np.zeros(0) if self.task == REGRESSION else np.zeros((0, width))
        X, is_cat = self.encoder.transform(table)
        if self.kind == TAB_MLP:
            X = one_hot(X, is_cat, self.encoder.cardinalities)
        return self.model.predict_raw(X)


def fit_ert(table: DataTable, task=None, n_trees: int = 100, seed: int = 0, **kw) -> TabularPredictor:
    return TabularPredictor(ERT, seed=seed, n_trees=n_trees).fit(table, task, **kw)


def fit_gbm(table: DataTable, preset: str = "a", task=None, seed: int = 0, **kw) -> TabularPredictor:
    if preset not in PRESETS:
        raise ValueError(f"unknown GBM preset {preset!r}")
    return TabularPredictor(GBM_A if preset == "a" else GBM_B, seed=seed).fit(table, task, **kw)


def fit_tab_mlp(table: DataTable, task=None, seed: int = 0, **kw) -> TabularPredictor:
    return TabularPredictor(TAB_MLP, seed=seed).fit(table, task, **kw)


def predict(p, table: DataTable) -> np.ndarray:
    return p.predict(table)
