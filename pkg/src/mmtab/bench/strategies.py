"""Benchmark strategies: each maps a shared (train, val) split to a fitted
predictor whose ``predict`` accepts raw tables."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..ensemble import FUSION_NET, ModelSpec, fit_stack, fit_weighted
from ..featurize import EmbeddingFeaturizer, EmbeddingMode, fit_ngram, ngram_transform
from ..frame import CATEGORICAL, NUMERIC, TEXT, DataTable, concat_tables, infer_schema
from ..nn.model import ALL_TEXT, FUSE_EARLY, FUSE_LATE, TEXT_ONLY
from ..nn.pipeline import FusionModel, NetSpec
from ..tabmodels.predictor import TABULAR_KINDS

STRATEGIES = ("text_net", "all_text", "fuse_early", "fuse_late", "pre_embedding", "text_embedding",
              "multimodal_embedding", "weighted_ensemble", "stack_ensemble", "tab_weighted", "tab_stack",
              "tab_weighted_ngram", "tab_stack_ngram")


class Incompatible(Exception):
    """The strategy cannot run on this dataset; the cell is skipped with this reason."""


@dataclass
class Fitted:
    """A fitted strategy: ``predict`` on raw tables plus optional per-model extras."""
    model: object
    transform: Callable[[DataTable], DataTable] | None = None
    extras: dict = field(default_factory=dict)     # model id -> fitted single model (raw-table predict)
    manifest: dict = field(default_factory=dict)

    @property
    def label_encoder(self):
        return self.model.label_encoder

    def predict(self, table: DataTable) -> np.ndarray:
        if self.transform is not None:
            table = self.transform(table)
        return self.model.predict(table)


def modalities(table: DataTable) -> dict[str, list[str]]:
    features = table.drop([table.target]) if table.target is not None else table
    schema = infer_schema(features)
    return {m: schema.columns(m) for m in (NUMERIC, CATEGORICAL, TEXT)}


def _net_spec(variant: str, options: dict) -> NetSpec:
    spec = NetSpec(variant=variant)
    train = dict(options.get("train", {}))
    if options.get("no_layer_decay"):
        train["layer_decay"] = 1.0
    if options.get("no_checkpoint_averaging"):
        train["checkpoints_to_average"] = 1
    if train:
        spec = spec.with_train(**train)
    if options.get("net"):
        spec = NetSpec(variant, {**spec.net, **options["net"]}, spec.train)
    return spec


def _net_params(variant: str, options: dict) -> dict:
    p = {"variant": variant}
    train = dict(options.get("train", {}))
    if options.get("no_layer_decay"):
        train["layer_decay"] = 1.0
    if options.get("no_checkpoint_averaging"):
        train["checkpoints_to_average"] = 1
    if train:
        p["train"] = train
    if options.get("net"):
        p["net"] = dict(options["net"])
    return p


def _require(mods, text=False, tab=False, name=""):
    if text and not mods[TEXT]:
        raise Incompatible(f"{name} needs at least one text column")
    if tab and not (mods[NUMERIC] or mods[CATEGORICAL]):
        raise Incompatible(f"{name} needs numeric or categorical columns")


def _net(variant):
    def run(train, val, seed, options):
        mods = modalities(train)
        _require(mods, text=True, tab=variant in (FUSE_EARLY, FUSE_LATE), name=variant)
        model = FusionModel(_net_spec(variant, options), seed=seed).fit(train, val)
        return Fitted(model, manifest={"net": variant})
    return run


def _tab_specs(options):
    kinds = options.get("tabular_models", list(TABULAR_KINDS))
    return [ModelSpec(k) for k in kinds]


def _drop_text(table: DataTable, text_cols) -> DataTable:
    return table.drop([c for c in text_cols if c in table])


def _weighted(specs, train, val, seed, options):
    ens = fit_weighted(train, val, specs, seed=seed)
    return Fitted(ens, extras=dict(ens.models), manifest=ens.manifest())


def _stack(base, stackers, train, val, seed, options):
    # bagging replaces the validation split, so the stack is fit on train + val
    data = concat_tables([train, val]) if options.get("bag_holdout", True) else train
    ens = fit_stack(data, base, stackers, k=options.get("k", 5), seed=seed)
    return Fitted(ens, manifest=ens.manifest())


def _ensemble(kind, with_net, ngram):
    def run(train, val, seed, options):
        mods = modalities(train)
        transform = None
        if with_net:
            _require(mods, text=True, tab=True, name=kind)
        elif ngram:
            _require(mods, text=True, name=kind)
            vocab = fit_ngram(train, cap=options.get("ngram_cap", 512), min_df=options.get("ngram_min_df", 2))
            transform = lambda t: ngram_transform(vocab, t)   # noqa: E731
            train, val = transform(train), transform(val)
        else:
            _require(mods, tab=True, name=kind)
            text_cols = mods[TEXT]
            transform = lambda t: _drop_text(t, text_cols)   # noqa: E731
            train, val = transform(train), transform(val)
        base = _tab_specs(options)
        if with_net:
            net_variant = options.get("net_variant", FUSE_LATE)
            base = base + [ModelSpec(FUSION_NET, _net_params(net_variant, options))]
        if kind == "weighted":
            fitted = _weighted(base, train, val, seed, options)
        else:
            fitted = _stack(base, _tab_specs(options), train, val, seed, options)
        fitted.transform = transform
        if transform is not None:
            fitted.extras = {m: _Transformed(p, transform) for m, p in fitted.extras.items()}
        return fitted
    return run


class _Transformed:
    def __init__(self, model, transform):
        self.model = model
        self.transform = transform
        self.label_encoder = getattr(model, "label_encoder", None)

    def predict(self, table):
        return self.model.predict(self.transform(table))


def _embedding(mode: EmbeddingMode):
    def run(train, val, seed, options):
        mods = modalities(train)
        _require(mods, text=True, name=mode.value)
        if mode == EmbeddingMode.MULTIMODAL:
            _require(mods, tab=True, name=mode.value)
        spec = _net_spec(TEXT_ONLY, options)
        feat = EmbeddingFeaturizer.fit(mode, train, val, spec=spec, seed=seed)
        transform = feat.transform
        fitted = _weighted(_tab_specs(options), transform(train), transform(val), seed, options)
        fitted.transform = transform
        fitted.extras = {m: _Transformed(p, transform) for m, p in fitted.extras.items()}
        return fitted
    return run


REGISTRY: dict[str, Callable] = {
    "text_net": _net(TEXT_ONLY),
    "all_text": _net(ALL_TEXT),
    "fuse_early": _net(FUSE_EARLY),
    "fuse_late": _net(FUSE_LATE),
    "pre_embedding": _embedding(EmbeddingMode.PRE),
    "text_embedding": _embedding(EmbeddingMode.TEXT),
    "multimodal_embedding": _embedding(EmbeddingMode.MULTIMODAL),
    "weighted_ensemble": _ensemble("weighted", with_net=True, ngram=False),
    "stack_ensemble": _ensemble("stack", with_net=True, ngram=False),
    "tab_weighted": _ensemble("weighted", with_net=False, ngram=False),
    "tab_stack": _ensemble("stack", with_net=False, ngram=False),
    "tab_weighted_ngram": _ensemble("weighted", with_net=False, ngram=True),
    "tab_stack_ngram": _ensemble("stack", with_net=False, ngram=True),
}
assert set(REGISTRY) == set(STRATEGIES)


def fit_strategy(name: str, train: DataTable, val: DataTable, seed: int = 0, options: dict | None = None) -> Fitted:
    if name not in REGISTRY:
        raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
    return REGISTRY[name](train, val, seed, dict(options or {}))
