import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtab.bench.runner import (DatasetConfig, RunConfig, load_dataset, model_manifest_name, refit_from_manifest,
                                row_hash, run, shared_split)
from mmtab.bench.strategies import STRATEGIES, Incompatible, fit_strategy
from mmtab.bench.synthetic import SyntheticSpec, gen_synthetic
from mmtab.cli import main
from mmtab.errors import ConfigError
from mmtab.evalkit import accuracy
from mmtab.featurize import fit_ngram, ngram_transform
from mmtab.frame import write_csv
from mmtab.tabmodels import TabularPredictor

FAST = {"tabular_models": ["ert"], "train": {"epochs": 1},
        "net": {"hidden_size": 16, "n_layers": 1, "n_heads": 2, "ffn_size": 32}}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    tr, te = gen_synthetic(SyntheticSpec(n_rows=250, signal_allocation=(0.5, 0.5, 0.0), seed=3, name="mix"))
    write_csv(tr, d / "mix.csv")
    write_csv(te, d / "mix_test.csv")
    notext = tr.drop(["text_0", "text_1"])
    write_csv(notext, d / "notext.csv")
    return d


def config(d, strategies, **kw):
    base = {"datasets": [{"name": "mix", "path": "mix.csv", "target": "label", "task": "binary"}],
            "strategies": strategies, "seeds": [0], "options": FAST}
    base.update(kw)
    path = d / "config.json"
    path.write_text(json.dumps(base))
    return path


# -- synthetic generator -----------------------------------------------------

def test_synthetic_is_deterministic():
    spec = SyntheticSpec(n_rows=120, seed=4)
    (a, b), (c, d) = gen_synthetic(spec), gen_synthetic(spec)
    assert row_hash(a) == row_hash(c) and row_hash(b) == row_hash(d)
    assert a.n_rows + b.n_rows == 120


@settings(max_examples=15, deadline=None)
@given(st.integers(1000, 3000), st.floats(0.2, 0.8), st.integers(0, 1000))
def test_synthetic_class_balance_within_two_percent(n, balance, seed):
    tr, te = gen_synthetic(SyntheticSpec(n_rows=n, class_balance=balance, noise=0.0, seed=seed, n_text_fields=1))
    y = np.concatenate([tr.labels(), te.labels()])
    assert abs(y.mean() - balance) <= 0.02


@pytest.mark.parametrize("bad", [dict(signal_allocation=(0.5, 0.2, 0.2)), dict(signal_allocation=(1.2, -0.2, 0)),
                                 dict(noise=1.5), dict(task="ranking"), dict(n_text_fields=0),
                                 dict(task="multiclass", n_classes=2)])
def test_synthetic_spec_validation(bad):
    with pytest.raises(ValueError):
        SyntheticSpec(**bad)


def test_synthetic_spec_json_roundtrip():
    spec = SyntheticSpec(n_rows=50, signal_allocation=(0.2, 0.3, 0.5), seed=9)
    assert SyntheticSpec.from_json(spec.to_json()) == spec


def _text_only(t):
    return t.drop([c for c in t.feature_names if not c.startswith("text")])


@pytest.mark.parametrize("alloc,noise,tab_ok,text_ok", [((1, 0, 0), 0.1, False, True),
                                                         ((0, 1, 0), 0.1, True, False),
                                                         ((0.5, 0.5, 0), 1.0, False, False)])
def test_signal_allocation_reaches_the_intended_modality(alloc, noise, tab_ok, text_ok):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr, te = gen_synthetic(SyntheticSpec(n_rows=2500, signal_allocation=alloc, noise=noise, seed=1))
        tab = TabularPredictor("gbm_a", ignore_text=True).fit(tr)
        y = tab.label_encoder.transform(te.labels())
        vocab = fit_ngram(_text_only(tr), cap=64)
        txt = TabularPredictor("gbm_a").fit(ngram_transform(vocab, _text_only(tr)))
        acc_tab = accuracy(tab.predict(te), y)
        acc_txt = accuracy(txt.predict(ngram_transform(vocab, _text_only(te))), y)
    assert (acc_tab > 0.8) if tab_ok else abs(acc_tab - 0.5) <= 0.05
    assert (acc_txt > 0.8) if text_ok else abs(acc_txt - 0.5) <= 0.05


# -- strategies ------------------------------------------------------------

def test_fusion_on_text_free_table_is_incompatible():
    tr, _ = gen_synthetic(SyntheticSpec(n_rows=60, signal_allocation=(0, 1, 0), n_text_fields=0))
    for name in ("text_net", "fuse_late", "pre_embedding", "stack_ensemble", "tab_stack_ngram"):
        with pytest.raises(Incompatible):
            fit_strategy(name, tr, tr, options=FAST)


def test_unknown_strategy():
    with pytest.raises(ValueError):
        fit_strategy("bagged_svm", None, None)


# -- runner ----------------------------------------------------------------

def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"datasets": [], "strategies": ["tab_stack"]})
    with pytest.raises(ConfigError):
        DatasetConfig("x", "x.csv", "y", "binary", metric="r2")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"datasets": [{"name": "a", "path": "a", "target": "y", "task": "binary"}],
                             "strategies": ["roberta"]})
    cfg = RunConfig.from_dict({"datasets": [{"name": "a", "path": "a", "target": "y", "task": "regression"}],
                               "strategies": ["tab_stack"], "seed": 4})
    assert cfg.seeds == (4,) and cfg.datasets[0].metric == "r2"


def test_shared_split_is_stable(synth_dir):
    data = load_dataset(DatasetConfig("mix", str(synth_dir / "mix.csv"), "label", "binary"))
    a, b = shared_split(data, 1, 0.1), shared_split(data, 1, 0.1)
    assert a[2] == b[2] and row_hash(a[0]) == row_hash(b[0])
    assert shared_split(data, 2, 0.1)[2] != a[2]
    assert a[0].n_rows + a[1].n_rows == data.pool.n_rows


def test_run_two_strategies_two_rows_and_deterministic(synth_dir, tmp_path):
    cfg = RunConfig.load(config(synth_dir, ["tab_stack", "tab_weighted"]))
    r1 = run(cfg, out_dir=tmp_path / "a")
    r2 = run(cfg, out_dir=tmp_path / "b")
    assert r1.exit_code == 0
    lines = (tmp_path / "a" / "results.csv").read_text().strip().splitlines()
    assert len(lines) == 3
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    assert len({r["train_hash"] for r in r1.records}) == 1
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config"]["strategies"] == ["tab_stack", "tab_weighted"]
    assert man["splits"]["mix"]["0"]["train_hash"] == r1.records[0]["train_hash"]
    assert (tmp_path / "a" / "models" / model_manifest_name("mix", "tab_stack", 0)).exists()


def test_skipped_cell_is_recorded_with_reason(synth_dir, tmp_path):
    cfg = config(synth_dir, ["fuse_late", "tab_weighted"],
                 datasets=[{"name": "nt", "path": "notext.csv", "target": "label", "task": "binary"}])
    res = run(RunConfig.load(cfg), out_dir=tmp_path)
    assert res.exit_code == 0
    skipped = [r for r in res.records if r["status"] == "skipped"]
    assert [r["method"] for r in skipped] == ["fuse_late"]
    assert "text" in skipped[0]["reason"]
    assert np.isnan(skipped[0]["score"])
    assert "fuse_late" not in (tmp_path / "results.txt").read_text()


def test_missing_dataset_exits_2(synth_dir, tmp_path, capsys):
    cfg = config(synth_dir, ["tab_weighted"],
                 datasets=[{"name": "gone", "path": "nope.csv", "target": "label", "task": "binary"}])
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "gone" in capsys.readouterr().err


def test_process_pool_matches_serial(synth_dir, tmp_path):
    cfg = RunConfig.load(config(synth_dir, ["tab_weighted", "tab_weighted_ngram"]))
    run(cfg, out_dir=tmp_path / "s")
    run(cfg, out_dir=tmp_path / "p", workers=2)
    assert (tmp_path / "s" / "results.csv").read_bytes() == (tmp_path / "p" / "results.csv").read_bytes()


# -- CLI -------------------------------------------------------------------

def test_cli_synth_run_report_importance(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(SyntheticSpec(n_rows=200, signal_allocation=(0, 1, 0), seed=5, name="tab").to_json())
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "data")]) == 0
    assert "wrote 160 train and 40 test rows" in capsys.readouterr().out
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"datasets": [{"name": "tab", "path": "data/train.csv", "test_path": "data/test.csv",
                                             "target": "label", "task": "binary"}],
                               "strategies": ["tab_weighted"], "seeds": [0], "options": FAST}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert "tab_weighted" in out and "avg" in out
    assert main(["report", "--results", str(tmp_path / "out" / "results.csv")]) == 0
    assert capsys.readouterr().out == out
    model = tmp_path / "out" / "models" / model_manifest_name("tab", "tab_weighted", 0)
    fitted, cell = refit_from_manifest(model)
    assert cell["strategy"] == "tab_weighted"
    assert main(["importance", "--model", str(model), "--data", str(tmp_path / "data" / "test.csv"),
                 "--column", "num_0", "--column", "text_0", "--repeats", "2"]) == 0
    rows = dict(line.split("\t") for line in capsys.readouterr().out.strip().splitlines())
    assert set(rows) == {"num_0", "text_0"}
    assert float(rows["text_0"]) == 0.0     # text is dropped by the tabular ensemble


def test_strategy_ids_closed_set():
    assert len(STRATEGIES) == 13
