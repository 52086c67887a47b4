"""Metrics, benchmark aggregation (avg / mean reciprocal rank) and
permutation feature importance."""
from __future__ import annotations

import csv
import io
import math
from typing import Callable, Iterable, Mapping

import numpy as np

ACCURACY = "accuracy"
AUC = "auc"
R2 = "r2"
METRICS = (ACCURACY, AUC, R2)

_TASK_METRIC = {"multiclass": ACCURACY, "binary": AUC, "regression": R2}


def metric_for_task(task: str) -> str:
    try:
        return _TASK_METRIC[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}") from None


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks of ``values`` in ascending order, ties get their mean rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_v = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    boundaries = np.flatnonzero(np.diff(sorted_v) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(values)]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def auc(scores, y) -> float:
    """Probability that a random positive outscores a random negative (ties 1/2)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    r = average_ranks(scores)
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(preds, y) -> float:
    preds = np.asarray(preds)
    y = np.asarray(y).reshape(-1)
    if preds.ndim == 1:
        labels = (preds > 0.5).astype(np.int64)
    else:
        labels = preds.argmax(axis=1)
    return float(np.mean(labels == y))


def r2(preds, y) -> float:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for constant labels")
    return 1.0 - float(np.sum((y - preds) ** 2)) / ss_tot


def score(kind: str, preds, y) -> float:
    if len(np.asarray(y)) < 1:
        raise ValueError("cannot score an empty prediction set")
    if len(np.asarray(preds)) != len(np.asarray(y)):
        raise ValueError("predictions and labels have different lengths")
    if kind == ACCURACY:
        return accuracy(preds, y)
    if kind == AUC:
        preds = np.asarray(preds)
        return auc(preds[:, 1] if preds.ndim == 2 else preds, y)
    if kind == R2:
        return r2(preds, y)
    raise ValueError(f"unknown metric {kind!r}")


def scorer(kind: str) -> Callable[[np.ndarray, np.ndarray], float]:
    """``(y, preds) -> score`` closure, the argument order training loops use."""
    return lambda y, p: score(kind, p, y)


def safe_scorer(task: str) -> Callable[[np.ndarray, np.ndarray], float]:
    """Task metric that degrades to negative log-loss when AUC is undefined."""
    kind = metric_for_task(task)

    def fn(y, p):
        y = np.asarray(y)
        if kind == AUC and len(np.unique(y)) < 2:
            p = np.clip(np.asarray(p)[np.arange(len(y)), y], 1e-15, 1.0)
            return float(np.mean(np.log(p)))
        return score(kind, p, y)

    return fn


# -- aggregation -----------------------------------------------------------

def aggregate(scores: Mapping[tuple[str, str], float], methods: Iterable[str] | None = None,
              datasets: Iterable[str] | None = None) -> tuple[dict[str, float], dict[str, float]]:
    """Average score and mean reciprocal rank per method.

    ``scores`` maps (method, dataset) to a higher-is-better score.  Rank 1 is
    best; tied methods share the mean of their rank positions.
    """
    methods = sorted({m for m, _ in scores}) if methods is None else list(methods)
    datasets = sorted({d for _, d in scores}) if datasets is None else list(datasets)
    holes = [(m, d) for m in methods for d in datasets if (m, d) not in scores]
    if holes:
        raise ValueError(f"missing scores for (method, dataset): {holes}")
    avg = {m: float(np.mean([scores[m, d] for d in datasets])) for m in methods}
    recip = {m: [] for m in methods}
    for d in datasets:
        ranks = per_dataset_ranks({m: scores[m, d] for m in methods})
        for m in methods:
            recip[m].append(1.0 / ranks[m])
    mrr = {m: float(np.mean(recip[m])) for m in methods}
    return avg, mrr


def per_dataset_ranks(row: Mapping[str, float]) -> dict[str, float]:
    names = list(row)
    ranks = average_ranks(-np.asarray([row[m] for m in names], dtype=np.float64))
    return dict(zip(names, ranks.tolist()))


def mean_ranks(scores: Mapping[tuple[str, str], float]) -> dict[str, float]:
    methods = sorted({m for m, _ in scores})
    datasets = sorted({d for _, d in scores})
    acc = {m: [] for m in methods}
    for d in datasets:
        for m, r in per_dataset_ranks({m: scores[m, d] for m in methods}).items():
            acc[m].append(r)
    return {m: float(np.mean(v)) for m, v in acc.items()}


def results_csv(records: Iterable[Mapping]) -> str:
    fields = ["method", "dataset", "seed", "score", "status", "reason"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in records:
        row = {k: r.get(k, "") for k in fields}
        if isinstance(row["score"], float):
            row["score"] = "" if math.isnan(row["score"]) else f"{row['score']:.6f}"
        w.writerow(row)
    return buf.getvalue()


def read_results_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["score"] = float(r["score"]) if r.get("score") not in (None, "") else math.nan
    return rows


def render_table(records: Iterable[Mapping]) -> str:
    """Plain-text results table: one row per method, one column per dataset,
    then avg and mrr.  Scores are averaged over seeds; skipped cells show '-'
    and exclude the method from avg/mrr."""
    records = [r for r in records]
    methods = sorted({r["method"] for r in records})
    datasets = sorted({r["dataset"] for r in records})
    cell: dict[tuple[str, str], list[float]] = {}
    for r in records:
        s = r.get("score")
        if isinstance(s, str):
            s = float(s) if s else math.nan
        if s is not None and not math.isnan(s):
            cell.setdefault((r["method"], r["dataset"]), []).append(float(s))
    means = {k: float(np.mean(v)) for k, v in cell.items()}
    complete = [m for m in methods if all((m, d) in means for d in datasets)]
    avg, mrr = aggregate({k: v for k, v in means.items() if k[0] in complete}, complete, datasets) if complete else ({}, {})
    header = ["method"] + datasets + ["avg", "mrr"]
    rows = []
    for m in methods:
        row = [m] + [f"{means[m, d]:.3f}" if (m, d) in means else "-" for d in datasets]
        row += [f"{avg[m]:.3f}" if m in avg else "-", f"{mrr[m]:.3f}" if m in mrr else "-"]
        rows.append(row)
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    line = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    out = [line(header), "  ".join("-" * w for w in widths)] + [line(r) for r in rows]
    return "\n".join(out) + "\n"


# -- permutation importance ------------------------------------------------

def permutation_importance(predictor, test, column: str, kind: str, repeats: int = 5, seed: int = 0,
                           permute: Callable[[np.random.Generator, int], np.ndarray] | None = None) -> float:
    """Drop in ``kind`` score when the cells of ``column`` are shuffled across rows.

    ``predictor.predict`` must accept the original (pre-featurization) table so
    whole cells, e.g. entire text fields, move as units.
    """
    if column not in test.column_names or column == test.target:
        raise KeyError(f"column {column!r} not found among the features of {test.name!r}")
    y = _targets_for(predictor, test)
    base = score(kind, predictor.predict(test), y)
    rng = np.random.default_rng(seed)
    permute = permute or (lambda g, n: g.permutation(n))
    values = test.column(column)
    drops = []
    for _ in range(repeats):
        perm = np.asarray(permute(rng, test.n_rows))
        drops.append(score(kind, predictor.predict(test.with_values(column, values[perm])), y))
    return float(base - np.mean(drops))


def _targets_for(predictor, table):
    enc = getattr(predictor, "label_encoder", None)
    y = table.labels()
    return enc.transform(y) if enc is not None else np.asarray(y)
