"""Synthetic multimodal tables with a controllable split of label signal.

The label is driven by three unit-variance latents:

* text ``t``: count of positive minus negative keywords in the first text field;
* tabular ``u``: linear in the numeric columns plus per-level categorical effects;
* interaction ``z``: +1 when (marker keyword present) XOR (``num_0 > 0``), else -1.

``score = sqrt(a) t + sqrt(b) u + sqrt(c) z`` for allocation ``(a, b, c)``, so
each latent contributes its share of the score variance.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..frame import BINARY, MULTICLASS, REGRESSION, TASKS, DataTable

POSITIVE = ("excellent", "superb", "great", "lovely", "amazing", "perfect")
NEGATIVE = ("awful", "terrible", "poor", "horrible", "broken", "worst")
MARKER = "vintage"
TARGET = "label"


def _filler_words(n: int = 300) -> list[str]:
    # fixed seed: the filler vocabulary is the same for every dataset
    rng = np.random.default_rng(12345)
    cons, vows = "bcdfghklmnprstvz", "aeiou"
    words = set()
    while len(words) < n:
        k = rng.integers(2, 4)
        words.add("".join(rng.choice(list(cons)) + rng.choice(list(vows)) for _ in range(k)))
    return sorted(words)


FILLER = _filler_words()


@dataclass(frozen=True)
class SyntheticSpec:
    n_rows: int = 1000
    n_numeric: int = 3
    n_categorical: int = 2
    n_text_fields: int = 2
    signal_allocation: tuple[float, float, float] = (0.5, 0.5, 0.0)  # text, tabular, interaction
    noise: float = 0.1
    task: str = BINARY
    seed: int = 0
    class_balance: float = 0.5
    n_classes: int = 2
    test_fraction: float = 0.2
    missing_rate: float = 0.02
    field_length: int = 12
    name: str = "synthetic"

    def __post_init__(self):
        alloc = tuple(float(a) for a in self.signal_allocation)
        object.__setattr__(self, "signal_allocation", alloc)
        if len(alloc) != 3 or any(a < 0 for a in alloc) or abs(sum(alloc) - 1.0) > 1e-9:
            raise ValueError("signal_allocation must be three non-negative fractions summing to 1")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        if alloc[0] + alloc[2] > 0 and self.n_text_fields < 1:
            raise ValueError("text or interaction signal needs at least one text field")
        if alloc[1] > 0 and self.n_numeric + self.n_categorical < 1:
            raise ValueError("tabular signal needs a numeric or categorical column")
        if alloc[2] > 0 and self.n_numeric < 1:
            raise ValueError("interaction signal needs a numeric column")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError("class_balance must lie in (0, 1)")
        if self.task == MULTICLASS and self.n_classes < 3:
            raise ValueError("multiclass needs n_classes >= 3")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        d = json.loads(text)
        if "signal_allocation" in d:
            d["signal_allocation"] = tuple(d["signal_allocation"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _standardize(v):
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else v - v.mean()


def _sentence(rng, length: int, inserts: list[str]) -> str:
    words = list(rng.choice(FILLER, size=length))
    for w in inserts:
        words.insert(int(rng.integers(0, len(words) + 1)), w)
    return " ".join(words)


def gen_synthetic(spec: SyntheticSpec) -> tuple[DataTable, DataTable]:
    """Generate (train, test) tables; deterministic in ``spec``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_rows
    a, b, c = spec.signal_allocation
    cols: dict[str, object] = {}

    X = rng.normal(size=(n, spec.n_numeric))
    w = rng.normal(size=spec.n_numeric)
    u = X @ w if spec.n_numeric else np.zeros(n)
    for j in range(spec.n_categorical):
        levels = [f"c{j}_{lv}" for lv in range(6)]
        effect = rng.normal(size=len(levels))
        idx = rng.integers(0, len(levels), size=n)
        u = u + effect[idx]
        cells = np.array(levels, dtype=object)[idx]
        cells[rng.random(n) < spec.missing_rate] = None
        cols[f"cat_{j}"] = cells
    for j in range(spec.n_numeric):
        col = X[:, j].copy()
        col[rng.random(n) < spec.missing_rate] = np.nan
        cols[f"num_{j}"] = col

    n_pos = rng.integers(0, 4, size=n)
    n_neg = rng.integers(0, 4, size=n)
    marker = rng.random(n) < 0.5
    t = (n_pos - n_neg).astype(np.float64)
    for f in range(spec.n_text_fields):
        texts = []
        for i in range(n):
            inserts = []
            if f == 0:
                inserts = list(rng.choice(POSITIVE, n_pos[i])) + list(rng.choice(NEGATIVE, n_neg[i]))
                if marker[i]:
                    inserts.append(MARKER)
            length = spec.field_length + int(rng.integers(-3, 4))
            texts.append(_sentence(rng, max(length, 1), inserts))
        cols[f"text_{f}"] = texts

    z = np.where(marker ^ (X[:, 0] > 0), 1.0, -1.0) if spec.n_numeric else np.zeros(n)
    score = np.sqrt(a) * _standardize(t) + np.sqrt(b) * _standardize(u) + np.sqrt(c) * _standardize(z)

    if spec.task == REGRESSION:
        eps = rng.normal(size=n)
        y = np.sqrt(1.0 - spec.noise) * _standardize(score) + np.sqrt(spec.noise) * eps
    else:
        # small jitter breaks ties in discrete scores so quantile cuts hit the requested balance
        jittered = score + 1e-6 * rng.normal(size=n)
        if spec.task == BINARY:
            cut = np.quantile(jittered, 1.0 - spec.class_balance)
            y = (jittered > cut).astype(np.int64)
            flip = rng.random(n) < spec.noise
            y[flip] = (rng.random(int(flip.sum())) < spec.class_balance).astype(np.int64)
        else:
            edges = np.quantile(jittered, np.arange(1, spec.n_classes) / spec.n_classes)
            y = np.searchsorted(edges, jittered).astype(np.int64)
            flip = rng.random(n) < spec.noise
            y[flip] = rng.integers(0, spec.n_classes, int(flip.sum()))
    cols[TARGET] = y

    table = DataTable(cols, name=spec.name, target=TARGET, task=spec.task)
    perm = rng.permutation(n)
    n_test = int(round(spec.test_fraction * n))
    test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return table.take(train_idx).with_meta(name=spec.name), table.take(test_idx).with_meta(name=spec.name)
