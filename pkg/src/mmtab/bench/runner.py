"""Config-driven benchmark runs: datasets x seeds x strategies on shared splits."""
from __future__ import annotations

import hashlib
import json
import logging
import subprocess
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import ConfigError, MmtabError
from ..evalkit import metric_for_task, render_table, results_csv, score
from ..frame import MODALITIES, TASKS, DataTable, SplitSpec, load_type_overrides, read_csv, split_indices
from .strategies import STRATEGIES, Incompatible, fit_strategy

log = logging.getLogger(__name__)

OK, SKIPPED, FAILED = "ok", "skipped", "failed"


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    path: str
    target: str
    task: str
    metric: str | None = None
    type_overrides: dict | str | None = None
    test_path: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"dataset {self.name!r}: unknown task {self.task!r}")
        bound = metric_for_task(self.task)
        if self.metric is None:
            object.__setattr__(self, "metric", bound)
        elif self.metric != bound:
            raise ConfigError(f"dataset {self.name!r}: a {self.task} task is scored by {bound}, not {self.metric}")

    def overrides(self, base: Path | None = None) -> dict:
        if self.type_overrides is None:
            return {}
        if isinstance(self.type_overrides, str):
            return load_type_overrides(_resolve(self.type_overrides, base))
        bad = {c: k for c, k in self.type_overrides.items() if k not in MODALITIES}
        if bad:
            raise ConfigError(f"dataset {self.name!r}: bad type overrides {bad}")
        return dict(self.type_overrides)


@dataclass(frozen=True)
class RunConfig:
    datasets: tuple[DatasetConfig, ...]
    strategies: tuple[str, ...]
    seeds: tuple[int, ...] = (0,)
    validation_fraction: float = 0.1
    test_fraction: float = 0.2     # used only for datasets without a test_path
    test_seed: int = 0
    output_dir: str | None = None
    options: dict = field(default_factory=dict)
    workers: int = 1
    base_dir: str | None = None    # relative dataset paths resolve against this

    def __post_init__(self):
        unknown = [s for s in self.strategies if s not in STRATEGIES]
        if unknown:
            raise ConfigError(f"unknown strategies {unknown}; choose from {list(STRATEGIES)}")
        if not self.strategies or not self.datasets or not self.seeds:
            raise ConfigError("config needs at least one dataset, strategy and seed")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError("dataset names must be unique")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "RunConfig":
        d = dict(d)
        try:
            datasets = tuple(DatasetConfig(**ds) for ds in d.pop("datasets"))
            strategies = tuple(d.pop("strategies"))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad run config: {exc}") from None
        if "seed" in d:
            d["seeds"] = [d.pop("seed")]
        if "seeds" in d:
            d["seeds"] = tuple(int(s) for s in d["seeds"])
        d.setdefault("base_dir", base_dir)
        try:
            return cls(datasets=datasets, strategies=strategies, **d)
        except TypeError as exc:
            raise ConfigError(f"bad run config: {exc}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data, base_dir=str(path.parent))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["datasets"] = [asdict(ds) for ds in self.datasets]
        d.pop("output_dir")
        d.pop("base_dir")
        d.pop("workers")    # worker count never changes results
        return d


def _resolve(path: str, base: Path | str | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else Path(base) / p


def row_hash(table: DataTable) -> str:
    """Content hash of a table's rows (column names, dtypes and values)."""
    h = hashlib.sha256()
    for c in table.column_names:
        arr = table.column(c)
        h.update(c.encode())
        h.update(str(arr.dtype).encode())
        if arr.dtype == object:
            h.update(json.dumps([None if v is None else str(v) for v in arr.tolist()]).encode())
        else:
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def _index_hash(idx: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(idx, dtype=np.int64).tobytes()).hexdigest()


@dataclass
class LoadedDataset:
    config: DatasetConfig
    pool: DataTable       # rows the train/validation split draws from
    test: DataTable


def load_dataset(ds: DatasetConfig, base=None, test_fraction: float = 0.2, test_seed: int = 0) -> LoadedDataset:
    overrides = ds.overrides(base)
    table = read_csv(_resolve(ds.path, base), overrides, target=ds.target, task=ds.task, name=ds.name)
    if ds.test_path:
        test = read_csv(_resolve(ds.test_path, base), overrides, target=ds.target, task=ds.task, name=ds.name)
        if test.column_names != table.column_names:
            raise ConfigError(f"dataset {ds.name!r}: test columns differ from training columns")
        return LoadedDataset(ds, table, test)
    pool_idx, test_idx = split_indices(table, SplitSpec(test_fraction, test_seed, stratify=True))
    return LoadedDataset(ds, table.take(pool_idx), table.take(test_idx))


def shared_split(data: LoadedDataset, seed: int, validation_fraction: float):
    """The one train/validation split every strategy sees for (dataset, seed)."""
    tr, va = split_indices(data.pool, SplitSpec(validation_fraction, seed, stratify=True))
    return data.pool.take(tr), data.pool.take(va), {"train_rows": _index_hash(tr), "val_rows": _index_hash(va)}


def run_cell(strategy: str, dataset: str, metric: str, train: DataTable, val: DataTable, test: DataTable,
             seed: int, options: dict) -> tuple[dict, dict | None]:
    """Fit one strategy and score it on test; returns (record, model manifest)."""
    record = {"method": strategy, "dataset": dataset, "seed": seed, "score": float("nan"),
              "status": OK, "reason": "", "train_hash": row_hash(train)}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fitted = fit_strategy(strategy, train, val, seed, options)
            preds = fitted.predict(test)
        y = fitted.label_encoder.transform(test.labels())
        record["score"] = float(score(metric, preds, y))
        extras = {}
        for mid, m in fitted.extras.items():
            extras[mid] = float(score(metric, m.predict(test), y))
        record["extras"] = extras
        return record, fitted.manifest
    except Incompatible as exc:
        record.update(status=SKIPPED, reason=str(exc))
    except (MmtabError, ValueError, FloatingPointError) as exc:
        log.exception("%s on %s (seed %d) failed", strategy, dataset, seed)
        record.update(status=FAILED, reason=f"{type(exc).__name__}: {exc}")
    return record, None


def _git_describe() -> str | None:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


@dataclass
class RunResult:
    records: list[dict]
    manifest: dict
    errors: list[str]

    @property
    def exit_code(self) -> int:
        return 2 if self.errors else 0


def run(config: RunConfig, out_dir=None, workers: int | None = None) -> RunResult:
    out = Path(out_dir or config.output_dir or "results")
    workers = workers or config.workers
    errors: list[str] = []
    jobs, splits, metrics = [], {}, {}
    for ds in config.datasets:
        try:
            data = load_dataset(ds, config.base_dir, config.test_fraction, config.test_seed)
        except (MmtabError, OSError, ValueError) as exc:
            errors.append(f"{ds.name}: {type(exc).__name__}: {exc}")
            continue
        metrics[ds.name] = ds.metric
        splits[ds.name] = {"test_rows": row_hash(data.test)}
        for seed in config.seeds:
            train, val, hashes = shared_split(data, seed, config.validation_fraction)
            splits[ds.name][str(seed)] = {**hashes, "train_hash": row_hash(train)}
            for strategy in config.strategies:
                jobs.append((strategy, ds.name, ds.metric, train, val, data.test, seed, config.options))

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, *zip(*jobs)))
    else:
        results = [run_cell(*job) for job in jobs]

    # collector: a fixed order regardless of completion order
    results.sort(key=lambda rm: (rm[0]["dataset"], rm[0]["seed"], STRATEGIES.index(rm[0]["method"])))
    records = [r for r, _ in results]
    for r in records:
        if r["status"] == FAILED:
            errors.append(f"{r['dataset']} / {r['method']} / seed {r['seed']}: {r['reason']}")
        if r["train_hash"] != splits[r["dataset"]][str(r["seed"])]["train_hash"]:
            raise AssertionError(f"{r['method']} on {r['dataset']} saw a different training split")

    manifest = {"version": __version__, "git": _git_describe(), "config": config.to_dict(),
                "splits": splits, "errors": errors,
                "cells": [{k: r[k] for k in ("method", "dataset", "seed", "status", "reason")} for r in records]}
    _write(out, config, records, results, manifest)
    return RunResult(records, manifest, errors)


def model_manifest_name(dataset: str, strategy: str, seed: int) -> str:
    return f"{dataset}__{strategy}__seed{seed}.json"


def _write(out: Path, config: RunConfig, records, results, manifest) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(records), encoding="utf-8")
    (out / "results.txt").write_text(render_table([r for r in records if r["status"] == OK]), encoding="utf-8")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    models = out / "models"
    models.mkdir(exist_ok=True)
    by_name = {ds.name: ds for ds in config.datasets}
    for rec, model in results:
        if model is None:
            continue
        ds = by_name[rec["dataset"]]
        cell = {"strategy": rec["method"], "seed": rec["seed"], "metric": ds.metric,
                "dataset": {**asdict(ds), "path": str(_resolve(ds.path, config.base_dir).resolve()),
                            "test_path": None if ds.test_path is None
                            else str(_resolve(ds.test_path, config.base_dir).resolve())},
                "validation_fraction": config.validation_fraction, "test_fraction": config.test_fraction,
                "test_seed": config.test_seed, "options": config.options, "model": model,
                "train_hash": rec["train_hash"]}
        if isinstance(ds.type_overrides, str):
            cell["dataset"]["type_overrides"] = ds.overrides(config.base_dir)
        path = models / model_manifest_name(rec["dataset"], rec["method"], rec["seed"])
        path.write_text(json.dumps(cell, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def refit_from_manifest(path):
    """Rebuild the exact fitted strategy a model manifest describes."""
    cell = json.loads(Path(path).read_text(encoding="utf-8"))
    ds = DatasetConfig(**cell["dataset"])
    data = load_dataset(ds, None, cell["test_fraction"], cell["test_seed"])
    train, val, _ = shared_split(data, cell["seed"], cell["validation_fraction"])
    if row_hash(train) != cell["train_hash"]:
        raise ConfigError(f"{path}: the dataset no longer reproduces the recorded training split")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fitted = fit_strategy(cell["strategy"], train, val, cell["seed"], cell["options"])
    return fitted, cell
