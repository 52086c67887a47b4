import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtab.evalkit import (ACCURACY, AUC, R2, aggregate, auc, mean_ranks, metric_for_task, permutation_importance,
                           read_results_csv, render_table, results_csv, score)
from mmtab.frame import DataTable, LabelEncoder


def brute_auc(s, y):
    pos = [a for a, t in zip(s, y) if t == 1]
    neg = [a for a, t in zip(s, y) if t == 0]
    hits = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return hits / (len(pos) * len(neg))


def test_task_binding():
    assert [metric_for_task(t) for t in ("multiclass", "binary", "regression")] == [ACCURACY, AUC, R2]


def test_auc_example():
    assert score(AUC, [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_single_class():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


def test_r2_examples():
    assert score(R2, [2.0, 2.0, 2.0], [1, 2, 3]) == 0.0
    assert score(R2, [1, 2, 2], [1, 2, 3]) == 0.5
    with pytest.raises(ValueError):
        score(R2, [1, 2], [3, 3])


def test_accuracy_argmax():
    assert score(ACCURACY, [[0.2, 0.8], [0.9, 0.1], [0.3, 0.7]], [1, 0, 0]) == pytest.approx(2 / 3)


def test_length_mismatch():
    with pytest.raises(ValueError):
        score(ACCURACY, [[1, 0]], [0, 1])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=50))
@settings(max_examples=200, deadline=None)
def test_auc_brute_force_with_ties(pairs):
    s = [float(a) for a, _ in pairs]
    y = [b for _, b in pairs]
    if len(set(y)) < 2:
        return
    assert abs(auc(s, y) - brute_auc(s, y)) < 1e-12


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=4, max_size=30), st.integers(0, 1000))
@settings(max_examples=100, deadline=None)
def test_auc_monotone_invariance(s, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(s))
    if len(set(y)) < 2:
        return
    # transform the dense ranks so float rounding cannot merge distinct scores
    _, k = np.unique(np.asarray(s), return_inverse=True)
    assert auc(s, y) == auc(k ** 3 + 7.0, y) == auc(np.exp(k / 10.0), y)


@given(st.integers(0, 10 ** 6))
@settings(max_examples=100, deadline=None)
def test_metric_ranges(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 40))
    y = r.integers(0, 3, n)
    p = r.dirichlet(np.ones(3), n)
    assert 0.0 <= score(ACCURACY, p, y) <= 1.0
    yb = r.integers(0, 2, n)
    if len(set(yb)) == 2:
        assert 0.0 <= score(AUC, r.random(n), yb) <= 1.0
    yr = r.normal(size=n)
    assert score(R2, r.normal(size=n) * 5, yr) <= 1.0


# -- aggregation -----------------------------------------------------------

def test_single_method_mrr_one():
    avg, mrr = aggregate({("m", "d1"): 0.3, ("m", "d2"): 0.9})
    assert mrr == {"m": 1.0} and avg["m"] == pytest.approx(0.6)


def test_rank_one_then_two():
    _, mrr = aggregate({("a", "d1"): 0.9, ("b", "d1"): 0.5, ("a", "d2"): 0.1, ("b", "d2"): 0.6})
    assert mrr["a"] == 0.75 and mrr["b"] == 0.75


def test_ties_share_rank():
    _, mrr = aggregate({("a", "d"): 0.5, ("b", "d"): 0.5})
    assert mrr["a"] == mrr["b"] == 1 / 1.5


def test_missing_cell_listed():
    with pytest.raises(ValueError, match="'b', 'd2'"):
        aggregate({("a", "d1"): 1, ("a", "d2"): 1, ("b", "d1"): 1})


@given(st.dictionaries(st.tuples(st.sampled_from("abcd"), st.sampled_from("xyz")), st.floats(0, 1), min_size=1))
@settings(max_examples=100, deadline=None)
def test_someone_ranks_first(cells):
    methods = sorted({m for m, _ in cells})
    datasets = sorted({d for _, d in cells})
    full = {(m, d): cells.get((m, d), 0.0) for m in methods for d in datasets}
    from mmtab.evalkit import per_dataset_ranks
    for d in datasets:
        ranks = per_dataset_ranks({m: full[m, d] for m in methods})
        assert min(ranks.values()) <= len(methods) and any(r == min(ranks.values()) for r in ranks.values())
        assert min(ranks.values()) >= 1.0
        best = max(full[m, d] for m in methods)
        assert all(ranks[m] == min(ranks.values()) for m in methods if full[m, d] == best)
    assert set(mean_ranks(full)) == set(methods)


def test_results_roundtrip(tmp_path):
    recs = [{"method": "a", "dataset": "d", "seed": 0, "score": 0.5, "status": "ok", "reason": ""},
            {"method": "b", "dataset": "d", "seed": 0, "score": math.nan, "status": "skipped", "reason": "no text"}]
    p = tmp_path / "r.csv"
    p.write_text(results_csv(recs))
    back = read_results_csv(p)
    assert back[0]["score"] == 0.5 and math.isnan(back[1]["score"]) and back[1]["reason"] == "no text"
    table = render_table(recs)
    assert "avg" in table and "mrr" in table and "0.500" in table


# -- permutation importance ------------------------------------------------

class Copy:
    """Predicts the value of one numeric column."""
    label_encoder = None

    def __init__(self, col):
        self.col = col

    def predict(self, table):
        return np.nan_to_num(table.column(self.col).astype(float))


def _reg_table(n=1000, seed=0):
    r = np.random.default_rng(seed)
    x = r.normal(size=n)
    return DataTable({"x": x, "noise": r.normal(size=n), "y": x.copy()}, target="y", task="regression")


def test_ignored_feature_zero():
    t = _reg_table()
    assert abs(permutation_importance(Copy("x"), t, "noise", R2, repeats=5, seed=0)) <= 0.01


def test_copied_feature_large():
    t = _reg_table()
    assert permutation_importance(Copy("x"), t, "x", R2, repeats=5, seed=0) >= 0.9


def test_identity_permutation_exact_zero():
    t = _reg_table(100)
    imp = permutation_importance(Copy("x"), t, "x", R2, permute=lambda g, n: np.arange(n))
    assert imp == 0.0


def test_missing_column():
    with pytest.raises(KeyError):
        permutation_importance(Copy("x"), _reg_table(10), "nope", R2)


def test_bit_identical_repeat():
    t = _reg_table(300)
    a = permutation_importance(Copy("x"), t, "x", R2, seed=4)
    b = permutation_importance(Copy("x"), t, "x", R2, seed=4)
    assert a == b


def test_text_cells_move_whole():
    seen = []

    class Spy:
        label_encoder = LabelEncoder("binary", [0, 1])

        def predict(self, table):
            seen.append(list(table.column("s")))
            return np.tile([0.5, 0.5], (table.n_rows, 1))

    texts = [f"row {i} words" for i in range(30)]
    t = DataTable({"s": texts, "y": [i % 2 for i in range(30)]}, target="y", task="binary")
    permutation_importance(Spy(), t, "s", AUC, repeats=2)
    for cells in seen:
        assert sorted(cells) == sorted(texts)
