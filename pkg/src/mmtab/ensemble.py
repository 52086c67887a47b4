"""Ensemble selection, out-of-fold bagging and stacking over any predictor.

A predictor here is anything with ``fit(table, task=..., classes=...)`` and
``predict(table)``; both the tabular zoo and :class:`FusionModel` qualify.
"""
from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import MmtabWarning
from .evalkit import metric_for_task, score
from .frame import NUMERIC, REGRESSION, TEXT, DataTable, LabelEncoder, infer_schema
from .nn.pipeline import FusionModel, NetSpec
from .tabmodels.predictor import TABULAR_KINDS, TabularPredictor

log = logging.getLogger(__name__)

FUSION_NET = "fusion_net"


# -- model specs -----------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """What to fit: a zoo kind or ``fusion_net`` with its options."""
    kind: str
    params: Mapping = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in TABULAR_KINDS + (FUSION_NET,):
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def id(self) -> str:
        if self.name:
            return self.name
        if self.kind == FUSION_NET:
            return f"{FUSION_NET}:{self.params.get('variant', 'fuse_late')}"
        return self.kind

    def build(self, seed: int):
        if self.kind == FUSION_NET:
            p = dict(self.params)
            spec = NetSpec(variant=p.pop("variant", "fuse_late"))
            if "train" in p:
                spec = spec.with_train(**p.pop("train"))
            if "net" in p:
                spec = NetSpec(spec.variant, {**spec.net, **p.pop("net")}, spec.train)
            if p:
                raise ValueError(f"unknown fusion_net options {sorted(p)}")
            return FusionModel(spec, seed=seed)
        # tabular models see only the modalities they are suited for
        return TabularPredictor(self.kind, seed=seed, ignore_text=True, **self.params)

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "name": self.name}


def _fit(spec: ModelSpec, table: DataTable, task: str, classes, seed: int):
    model = spec.build(seed)
    model.fit(table, task=task, classes=classes)
    return model


# -- ensemble selection ----------------------------------------------------

@dataclass(frozen=True)
class EnsembleWeights:
    weights: dict[str, float]
    trace: tuple[float, ...] = ()

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("ensemble weights must be non-negative")
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"ensemble weights sum to {total}, not 1")

    @property
    def support(self) -> list[str]:
        return [k for k, w in self.weights.items() if w > 0]


def _as_metric(metric) -> Callable[[np.ndarray, np.ndarray], float]:
    if isinstance(metric, str):
        return lambda p, y: score(metric, p, y)
    return metric


def ensemble_selection(P: Mapping[str, np.ndarray], y, metric, rounds: int = 100,
                       patience: int = 10) -> EnsembleWeights:
    """Greedy forward selection with replacement.

    Each round adds the model whose inclusion maximizes ``metric(preds, y)``
    (higher is better) of the plain average over the selected multiset.
    Selection stops early after ``patience`` rounds without a new best score,
    and the best-scoring prefix is kept: re-adding a model that does not help
    on its own is how the multiset reaches uneven mixes like 4:1.  Weights are
    selection counts over the number of selections in that prefix.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if not P:
        raise ValueError("need at least one model")
    metric = _as_metric(metric)
    names = list(P)
    mats = [np.asarray(P[m], dtype=np.float64) for m in names]
    total = np.zeros_like(mats[0])
    counts = np.zeros(len(names), dtype=np.int64)
    best_score, best_counts, stall = -np.inf, counts, 0
    trace = []
    for r in range(rounds):
        scores = [metric((total + M) / (r + 1), y) for M in mats]
        j = int(np.argmax(scores))
        total += mats[j]
        counts[j] += 1
        trace.append(float(scores[j]))
        if scores[j] > best_score:
            best_score, best_counts, stall = scores[j], counts.copy(), 0
        else:
            stall += 1
            if stall >= patience:
                break
    n_sel = int(best_counts.sum())
    return EnsembleWeights({m: float(best_counts[i] / n_sel) for i, m in enumerate(names)}, tuple(trace))


def blend(preds: Mapping[str, np.ndarray], weights: EnsembleWeights) -> np.ndarray:
    """Weighted sum of model outputs (probability space for classification)."""
    out = None
    for m, w in weights.weights.items():
        if w == 0:
            continue
        term = w * np.asarray(preds[m], dtype=np.float64)
        out = term if out is None else out + term
    return out


# -- out-of-fold bagging ---------------------------------------------------

def fold_assignment(y, k: int, seed: int, stratify: bool) -> np.ndarray:
    """Row -> fold id.  Stratified: rows sorted by (class, random key), then
    dealt round-robin, so every fold gets each class's share within one row."""
    n = len(y)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")
    rng = np.random.default_rng(seed)
    key = rng.random(n)
    if stratify:
        classes = np.unique(np.asarray(y), return_inverse=True)[1]
        order = np.lexsort((key, classes))
    else:
        order = np.argsort(key, kind="mergesort")
    folds = np.empty(n, dtype=np.int64)
    folds[order] = np.arange(n) % k
    return folds


@dataclass
class OofEntry:
    spec: ModelSpec
    models: list
    oof: np.ndarray

    def predict(self, table: DataTable) -> np.ndarray:
        return np.mean([m.predict(table) for m in self.models], axis=0)


@dataclass
class OofRecord:
    k: int
    folds: np.ndarray
    task: str
    classes: list | None
    entries: dict[str, OofEntry] = field(default_factory=dict)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds != fold)

    def held_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds == fold)


def _fold_seed(seed: int, fold: int) -> int:
    return seed * 1009 + fold


def oof_fit(spec: ModelSpec, table: DataTable, k: int = 5, seed: int = 0, task: str | None = None,
            folds: np.ndarray | None = None, classes=None, workers: int = 1) -> tuple[OofEntry, np.ndarray]:
    """Fit ``k`` copies of ``spec``, each on k-1 folds; assemble the OOF matrix.

    Returns the entry and the fold assignment used.
    """
    task = task or table.task
    y_raw = table.labels()
    if classes is None and task != REGRESSION:
        classes = LabelEncoder.fit(y_raw, task).classes
    enc = LabelEncoder(task, classes) if task != REGRESSION else LabelEncoder(task)
    y = enc.transform(y_raw)
    if folds is None:
        folds = fold_assignment(y, k, seed, stratify=task != REGRESSION)
    k = int(folds.max()) + 1

    def one(f):
        tr = np.flatnonzero(folds != f)
        absent = [] if task == REGRESSION else sorted(set(range(len(classes))) - set(y[tr].tolist()))
        if absent:
            warnings.warn(f"{spec.id}: fold {f} training rows miss class indices {absent}; "
                          f"their probabilities are set to 0", MmtabWarning, stacklevel=3)
        model = _fit(spec, table.take(tr), task, classes, _fold_seed(seed, f))
        held = np.flatnonzero(folds == f)
        pred = np.asarray(model.predict(table.take(held)), dtype=np.float64)
        if absent:
            model = _MaskedClasses(model, absent)
            pred = model.mask(pred)
        return model, held, pred

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, range(k)))
    else:
        results = [one(f) for f in range(k)]
    width = results[0][2].shape[1:] if results[0][2].ndim > 1 else ()
    oof = np.zeros((table.n_rows,) + tuple(width))
    for _, held, pred in results:
        oof[held] = pred
    return OofEntry(spec, [r[0] for r in results], oof), folds


class _MaskedClasses:
    """Wraps a fold model so classes absent from its training rows get probability 0."""

    def __init__(self, model, absent):
        self.model = model
        self.absent = list(absent)

    def mask(self, pred):
        pred = pred.copy()
        pred[:, self.absent] = 0.0
        s = pred.sum(axis=1, keepdims=True)
        return np.where(s > 0, pred / np.where(s > 0, s, 1.0), pred)

    def predict(self, table):
        return self.mask(np.asarray(self.model.predict(table), dtype=np.float64))


def oof_fit_all(specs: Sequence[ModelSpec], table: DataTable, k: int = 5, seed: int = 0, task: str | None = None,
                workers: int = 1) -> OofRecord:
    task = task or table.task
    classes = None if task == REGRESSION else LabelEncoder.fit(table.labels(), task).classes
    y = LabelEncoder(task, classes).transform(table.labels())
    folds = fold_assignment(y, k, seed, stratify=task != REGRESSION)
    rec = OofRecord(k, folds, task, classes)
    for spec in specs:
        if spec.id in rec.entries:
            raise ValueError(f"duplicate model id {spec.id!r}")
        rec.entries[spec.id], _ = oof_fit(spec, table, k, seed, task, folds, classes, workers)
    return rec


# -- stacking --------------------------------------------------------------

def prediction_columns(model_id: str, pred: np.ndarray) -> dict[str, np.ndarray]:
    pred = np.asarray(pred)
    if pred.ndim == 1:
        return {f"pred[{model_id}]": pred}
    return {f"pred[{model_id}][{j}]": pred[:, j] for j in range(pred.shape[1])}


def tabular_columns(table: DataTable) -> list[str]:
    """Original non-text feature columns, by inferred or declared modality."""
    features = table.drop([table.target]) if table.target is not None else table
    schema = infer_schema(features)
    return [c for c in features.column_names if schema.assignments[c] != TEXT]


def stacker_table(table: DataTable, tab_cols: Sequence[str], preds: Mapping[str, np.ndarray]) -> DataTable:
    cols = {}
    for m, p in preds.items():
        cols.update(prediction_columns(m, p))
    for c in tab_cols:
        cols[c] = table.column(c)
    kinds = {c: NUMERIC for c in cols if c.startswith("pred[")}
    kinds.update({c: table.kinds.get(c) for c in tab_cols})
    if table.target is not None:
        cols[table.target] = table.labels()
    return table._replace(cols, kinds=kinds)


DEFAULT_BASE = (ModelSpec("ert"), ModelSpec("gbm_a"), ModelSpec("gbm_b"), ModelSpec("tab_mlp"))
DEFAULT_STACKERS = DEFAULT_BASE


@dataclass
class StackEnsemble:
    base: OofRecord
    stackers: OofRecord
    weights: EnsembleWeights
    tab_columns: list[str]
    seed: int

    @property
    def task(self) -> str:
        return self.base.task

    @property
    def label_encoder(self) -> LabelEncoder:
        return LabelEncoder(self.task, self.base.classes)

    def stacker_features(self, table: DataTable) -> DataTable:
        preds = {m: e.predict(table) for m, e in self.base.entries.items()}
        return stacker_table(table, self.tab_columns, preds)

    def predict(self, table: DataTable) -> np.ndarray:
        st = self.stacker_features(table)
        return blend({m: e.predict(st) for m, e in self.stackers.entries.items()}, self.weights)

    def manifest(self) -> dict:
        return {"type": "stack_ensemble", "seed": self.seed, "k": self.base.k, "task": self.task,
                "base": [e.spec.to_json() for e in self.base.entries.values()],
                "stackers": [e.spec.to_json() for e in self.stackers.entries.values()],
                "weights": self.weights.weights, "fold_assignment": self.base.folds.tolist(),
                "stacker_columns": self.tab_columns}


def fit_stack(table: DataTable, base_specs: Sequence[ModelSpec] = DEFAULT_BASE,
              stacker_specs: Sequence[ModelSpec] = DEFAULT_STACKERS, k: int = 5, seed: int = 0,
              metric=None, task: str | None = None, workers: int = 1) -> StackEnsemble:
    """Base layer OOF-fit on ``table``; stackers OOF-fit on [base OOF
    predictions, original numeric/categorical columns]; final weights by
    ensemble selection over the stackers' OOF predictions."""
    if not base_specs:
        raise ValueError("need at least one base model")
    for s in stacker_specs:
        if s.kind == FUSION_NET:
            raise ValueError("the multimodal network is not used as a stacker; pick tabular stacker kinds")
    task = task or table.task
    base = oof_fit_all(base_specs, table, k, seed, task, workers)
    tab_cols = tabular_columns(table)
    st = stacker_table(table, tab_cols, {m: e.oof for m, e in base.entries.items()})
    stackers = oof_fit_all(stacker_specs, st, k, seed + 1, task, workers)
    y = LabelEncoder(task, base.classes).transform(table.labels())
    weights = ensemble_selection({m: e.oof for m, e in stackers.entries.items()}, y,
                                 metric or metric_for_task(task))
    return StackEnsemble(base, stackers, weights, tab_cols, seed)


# -- weighted ensemble over a shared train/validation split ----------------

@dataclass
class WeightedEnsemble:
    models: dict
    weights: EnsembleWeights
    task: str
    classes: list | None
    specs: dict = field(default_factory=dict)
    seed: int = 0
    val_scores: dict = field(default_factory=dict)

    @property
    def label_encoder(self) -> LabelEncoder:
        return LabelEncoder(self.task, self.classes)

    def predict(self, table: DataTable) -> np.ndarray:
        return blend({m: self.models[m].predict(table) for m in self.weights.support}, self.weights)

    def manifest(self) -> dict:
        return {"type": "weighted_ensemble", "seed": self.seed, "task": self.task,
                "models": [s.to_json() for s in self.specs.values()], "weights": self.weights.weights}


def fit_weighted(train: DataTable, val: DataTable, specs: Sequence[ModelSpec] = DEFAULT_BASE, seed: int = 0,
                 metric=None, task: str | None = None) -> WeightedEnsemble:
    task = task or train.task
    classes = None if task == REGRESSION else LabelEncoder.fit(train.labels(), task).classes
    enc = LabelEncoder(task, classes)
    y_val = enc.transform(val.labels())
    kind = metric or metric_for_task(task)
    models, preds, specs_by_id, val_scores = {}, {}, {}, {}
    for spec in specs:
        model = spec.build(seed)
        if spec.kind == FUSION_NET:
            model.fit(train, val, task=task, classes=classes)
        else:
            model.fit(train, task=task, classes=classes)
        models[spec.id] = model
        specs_by_id[spec.id] = spec
        preds[spec.id] = np.asarray(model.predict(val), dtype=np.float64)
        val_scores[spec.id] = _as_metric(kind)(preds[spec.id], y_val)
    weights = ensemble_selection(preds, y_val, kind)
    return WeightedEnsemble(models, weights, task, classes, specs_by_id, seed, val_scores)


def predict_ensemble(e, table: DataTable) -> np.ndarray:
    """``e`` is a fitted ensemble or a ``(models, EnsembleWeights)`` pair."""
    if isinstance(e, tuple):
        models, weights = e
        return blend({m: models[m].predict(table) for m in weights.support}, weights)
    return e.predict(table)


def save_manifest(e, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(e.manifest(), fh, indent=2, sort_keys=True)
