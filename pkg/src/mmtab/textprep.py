"""Word-level vocabulary, tokenization and multi-field input merging."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Mapping, Sequence

import numpy as np

from .frame import CATEGORICAL, NUMERIC, TEXT, UNKNOWN, FeatureSchema

PAD, UNK, CLS, SEP = 0, 1, 2, 3
RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
MAX_LENGTH = 512

_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)


def split_words(text: str | None) -> list[str]:
    """Lowercased runs of letters/digits plus single punctuation marks."""
    if not text:
        return []
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocab:
    token_to_id: Mapping[str, int]
    max_size: int

    def __len__(self):
        return len(self.token_to_id)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def to_json(self) -> str:
        return json.dumps({"max_size": self.max_size, "token_to_id": dict(self.token_to_id)}, sort_keys=True)

    @classmethod
    def from_json(cls, payload: str) -> "Vocab":
        data = json.loads(payload)
        return cls(dict(data["token_to_id"]), int(data["max_size"]))


def build_vocab(corpus: Sequence[str | None], max_size: int = 20000) -> Vocab:
    if len(corpus) == 0:
        raise ValueError("corpus must be non-empty")
    counts = Counter()
    for doc in corpus:
        counts.update(split_words(doc))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max(max_size, 0)]
    table = {tok: i for i, tok in enumerate(RESERVED)}
    for tok, _ in ranked:
        table[tok] = len(table)
    return Vocab(table, max_size)


def tokenize(text: str | None, vocab: Vocab) -> list[int]:
    return [vocab.id(w) for w in split_words(text)]


@dataclass(frozen=True)
class MergedInput:
    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    field_spans: tuple[tuple[int, int], ...]

    @property
    def positions(self) -> range:
        return range(len(self.token_ids))

    def __len__(self):
        return len(self.token_ids)


def truncate_lengths(lengths: Sequence[int], max_length: int = MAX_LENGTH) -> list[int]:
    """Final per-field lengths after greedy longest-field truncation.

    While CLS + fields + one SEP per field exceeds ``max_length``, one token
    is dropped from the currently longest field, lowest index first on ties.
    """
    k = len(lengths)
    budget = max_length - 1 - k
    if budget < 0:
        raise ValueError(f"{k} fields cannot fit CLS plus one SEP each within max_length={max_length}")
    lens = np.asarray(lengths, dtype=np.int64)
    if lens.sum() <= budget:
        return lens.tolist()
    # The greedy loop levels the longest fields down to a water line h: the
    # largest h with sum(min(len, h)) <= budget.  Leftover budget goes back
    # to the highest-indexed fields above the line, since each pass over a
    # tied group removes from the lowest index first.
    lo, hi = 0, int(lens.max())
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if int(np.minimum(lens, mid).sum()) <= budget:
            lo = mid
        else:
            hi = mid - 1
    h = lo
    out = np.minimum(lens, h)
    extra = budget - int(out.sum())
    above = np.flatnonzero(lens > h)
    if extra:
        out[above[len(above) - extra:]] += 1
    return out.tolist()


def merge_fields(fields: Sequence[Sequence[int]], max_length: int = MAX_LENGTH) -> MergedInput:
    """Lay out ``[CLS] f1 [SEP] f2 [SEP] ... fk [SEP]`` within ``max_length``.

    Field i (and its SEP) carries segment id ``i % 2``; truncation removes
    trailing tokens from the longest field.
    """
    lens = truncate_lengths([len(f) for f in fields], max_length)
    ids, segs, spans = [CLS], [0], []
    for i, (f, n) in enumerate(zip(fields, lens)):
        start = len(ids)
        ids.extend(f[:n])
        spans.append((start, start + n))
        ids.append(SEP)
        segs.extend([i % 2] * (n + 1))
    return MergedInput(tuple(ids), tuple(segs), tuple(spans))


def format_sig3(value: float) -> str:
    """Render with exactly 3 significant digits, round-half-even.

    Fixed notation for magnitudes in [1e-3, 1e6), scientific otherwise.
    """
    if value == 0:
        return "0.00"
    d = Decimal(repr(float(value)))
    exp = d.adjusted()
    q = d.quantize(Decimal(1).scaleb(exp - 2), rounding=ROUND_HALF_EVEN)
    if q.adjusted() != exp:  # rounding carried into a new digit, e.g. 999.5 -> 1000
        exp = q.adjusted()
        q = d.quantize(Decimal(1).scaleb(exp - 2), rounding=ROUND_HALF_EVEN)
    mag = abs(float(q))
    if 1e-3 <= mag < 1e6:
        return format(q, "f") if exp < 2 else format(int(q), "d")
    mant = q.scaleb(-exp)
    return f"{format(mant, 'f')}e{exp:+d}"


def stringify_row(row: Mapping[str, object], schema: FeatureSchema) -> list[str]:
    """One pseudo-text field per feature column, in schema column order."""
    out = []
    for col, kind in schema.assignments.items():
        v = row.get(col)
        if v is None or (isinstance(v, float) and np.isnan(v)):
            out.append("")
        elif kind == NUMERIC:
            try:
                out.append(format_sig3(float(v)))
            except (TypeError, ValueError):
                out.append("")
        elif kind == CATEGORICAL:
            out.append("" if v == UNKNOWN else str(v))
        else:
            out.append(str(v))
    return out


def stringify_columns(table, schema: FeatureSchema, columns: Sequence[str]) -> list[list[str]]:
    """Column-wise :func:`stringify_row` over raw (untransformed) ``table`` cells."""
    sub = FeatureSchema({c: schema.assignments[c] for c in columns})
    cols = [table.column(c) for c in columns]
    rows = []
    for i in range(table.n_rows):
        rows.append(stringify_row({c: a[i] for c, a in zip(columns, cols)}, sub))
    return rows


__all__ = ["PAD", "UNK", "CLS", "SEP", "Vocab", "MergedInput", "build_vocab", "tokenize", "merge_fields",
           "truncate_lengths", "format_sig3", "stringify_row", "stringify_columns", "split_words", "TEXT"]
