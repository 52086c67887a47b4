import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtab.errors import MmtabWarning
from mmtab.featurize import (EmbeddingFeaturizer, EmbeddingMode, NgramVocab, embed_transform, fit_ngram,
                             ngram_counts, ngram_transform)
from mmtab.frame import DataTable
from mmtab.nn.pipeline import NetSpec

from helpers import make_table

TINY = NetSpec("text_only", {"hidden_size": 16, "n_layers": 1, "n_heads": 2, "ffn_size": 32},
               NetSpec().train).with_train(epochs=2)


def text_table(texts, other=None):
    cols = {"t": texts}
    if other is not None:
        cols["u"] = other
    return DataTable(cols, kinds={c: "text" for c in cols})


# -- n-grams ---------------------------------------------------------------

def test_min_df_filter():
    v = fit_ngram(text_table(["red shoe", "red hat"]))
    assert v.columns["t"] == {"red": 0}
    assert v.document_frequency["t"] == {"red": 2}


def test_cap_keeps_most_frequent():
    v = fit_ngram(text_table(["a b", "a c", "a b", "d"]), cap=1, min_df=1)
    assert list(v.columns["t"]) == ["a"]


def test_ties_break_lexicographically():
    v = fit_ngram(text_table(["zeta", "alpha", "zeta alpha"]), cap=2, min_df=1)
    assert list(v.columns["t"]) == ["alpha", "zeta"]


def test_sliding_window_counts():
    v = NgramVocab({"t": {"red": 0, "red shoe": 1}})
    np.testing.assert_array_equal(ngram_counts(v, "t", ["red red shoe", "", None]),
                                  [[2, 1], [0, 0], [0, 0]])


def test_columns_are_independent():
    t = text_table(["red shoe", "red hat", "blue"], ["blue sky", "blue sea", "x"])
    v = fit_ngram(t)
    assert v.columns == {"t": {"red": 0}, "u": {"blue": 0}}
    out = ngram_transform(v, t)
    assert out.column_names == ["t[red]", "u[blue]"]
    np.testing.assert_array_equal(out.column("u[blue]"), [1, 1, 0])


def test_transform_keeps_other_columns_and_rows():
    t = make_table(50)
    v = fit_ngram(t, cap=20)
    out = ngram_transform(v, t)
    assert out.n_rows == 50
    assert "text_0" not in out.column_names
    for c in ("num_0", "num_1", "cat_0", "y"):
        np.testing.assert_array_equal(out.column(c), t.column(c))
    assert len(out.feature_names) == len(v.columns["text_0"]) + 3
    assert out.target == "y"


def test_vocab_json_roundtrip():
    v = fit_ngram(make_table(40), cap=15)
    assert NgramVocab.from_json(v.to_json()) == v


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet="abc ", max_size=12), min_size=1, max_size=20), st.integers(1, 6),
       st.integers(1, 3))
def test_vocab_indices_dense_and_df_respected(texts, cap, min_df):
    v = fit_ngram(text_table(texts), cap=cap, min_df=min_df)
    idx = v.columns["t"]
    assert sorted(idx.values()) == list(range(len(idx)))
    assert len(idx) <= cap
    assert all(v.document_frequency["t"][g] >= min_df for g in idx)
    assert fit_ngram(text_table(texts), cap=cap, min_df=min_df) == v


# -- embedding modes -------------------------------------------------------

def test_pre_embedding_is_frozen_across_tables():
    a = EmbeddingFeaturizer.fit(EmbeddingMode.PRE, make_table(60, seed=1), spec=TINY, seed=2)
    b = EmbeddingFeaturizer.fit(EmbeddingMode.PRE, make_table(90, seed=7), spec=TINY, seed=2)
    pa, pb = a.encoder.net.params, b.encoder.net.params
    assert all(pa[k].data.tobytes() == pb[k].data.tobytes() for k in pa)


def test_embedding_shape_replaces_text_jointly():
    t = make_table(40)
    t2 = t._replace({**{c: t.column(c) for c in t.column_names}, "text_1": t.column("text_0")[::-1].copy()},
                    kinds={"text_1": "text"})
    f = EmbeddingFeaturizer.fit(EmbeddingMode.PRE, t2, spec=TINY)
    out = f.transform(t2)
    d = TINY.net["hidden_size"]
    assert out.feature_names == ["num_0", "num_1", "cat_0"] + [f"emb_{j}" for j in range(d)]
    np.testing.assert_array_equal(out.column("num_0"), t2.column("num_0"))
    assert out.target == "y"


def test_text_embedding_ignores_numerics_and_is_deterministic():
    train, val = make_table(80, seed=3), make_table(30, seed=4)
    f = EmbeddingFeaturizer.fit(EmbeddingMode.TEXT, train, val, spec=TINY, seed=0)
    g = EmbeddingFeaturizer.fit(EmbeddingMode.TEXT, train, val, spec=TINY, seed=0)
    probe = make_table(5, seed=9)
    cols = {c: probe.column(c) for c in probe.column_names}
    shifted = probe._replace({**cols, "num_0": cols["num_0"] + 10.0, "cat_0": np.array(["l0"] * 5, dtype=object)})
    a, b = f.transform(probe), f.transform(shifted)
    emb = [c for c in a.column_names if c.startswith("emb_")]
    for c in emb:
        np.testing.assert_array_equal(a.column(c), b.column(c))
        np.testing.assert_array_equal(a.column(c), g.transform(probe).column(c))


def test_multimodal_embedding_uses_late_fusion_encoder():
    f = EmbeddingFeaturizer.fit(EmbeddingMode.MULTIMODAL, make_table(60, seed=5), make_table(20, seed=6),
                                spec=TINY, seed=0)
    assert f.encoder.spec.variant == "fuse_late"
    out = f.transform(make_table(7, seed=8))
    assert sum(c.startswith("emb_") for c in out.column_names) == TINY.net["hidden_size"]


def test_no_text_is_identity_with_warning():
    f = EmbeddingFeaturizer.fit(EmbeddingMode.PRE, make_table(30, text=False))
    t = make_table(30, text=False)
    with pytest.warns(MmtabWarning):
        out = embed_transform(f, t)
    assert out is t
