"""End-to-end acceptance checks, one test per numbered criterion.

Each test records a PASS/FAIL line through the ``verdict`` fixture; the lines
are repeated in the pytest terminal summary.  Run alone with

    pytest tests/test_acceptance.py -v
"""
import json
import time
import warnings

import numpy as np
import pytest

from helpers import finite_difference_check
from mmtab.bench.runner import RunConfig, run
from mmtab.bench.strategies import fit_strategy
from mmtab.bench.synthetic import SyntheticSpec, gen_synthetic
from mmtab.cli import main
from mmtab.ensemble import ModelSpec, blend, ensemble_selection, oof_fit
from mmtab.evalkit import accuracy, auc, mean_ranks, permutation_importance, r2, score
from mmtab.frame import DataTable, SplitSpec, write_csv, split_train_val
from mmtab.nn import autograd as ag
from mmtab.nn.model import VARIANTS, NetConfig, build_net, collate, logits
from mmtab.nn.train import AdamW, TrainConfig, average_checkpoints, lr_at, lr_scales
from mmtab.textprep import merge_fields, truncate_lengths

pytestmark = pytest.mark.slow


# -- 1. metric oracles -----------------------------------------------------

def test_metric_oracles(verdict):
    r = np.random.default_rng(1)
    t = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(r.integers(2, 51))
        y = r.integers(0, 2, n)
        y[:2] = [0, 1]
        # coarse scores so ties are common
        s = r.integers(0, 8, n) / 7.0 if r.random() < 0.5 else r.random(n)
        pos, neg = s[y == 1], s[y == 0]
        pairs = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
        worst = max(worst, abs(auc(s, y) - pairs / (len(pos) * len(neg))))

        yr = r.normal(size=n)
        pr = r.normal(size=n)
        direct = 1 - sum((a - b) ** 2 for a, b in zip(yr, pr)) / sum((a - yr.mean()) ** 2 for a in yr)
        worst = max(worst, abs(r2(pr, yr) - direct))

        k = int(r.integers(2, 5))
        yc = r.integers(0, k, n)
        P = r.random((n, k))
        direct = sum(int(np.argmax(row) == lab) for row, lab in zip(P, yc)) / n
        worst = max(worst, abs(accuracy(P, yc) - direct))
    elapsed = time.perf_counter() - t
    ok = worst <= 1e-12 and elapsed < 10
    verdict(1, ok, f"metric oracles: max abs error {worst:.2e} over 1000 instances, {elapsed:.1f}s")
    assert ok


# -- 2. ensemble selection ---------------------------------------------------

def _neg_mse(p, y):
    return -float(np.mean((p - y) ** 2))


def _simplex_grid_best(P, y, step=0.05):
    a, b, c = P.values()
    best = -np.inf
    ticks = np.round(np.arange(0, 1 + step / 2, step), 10)
    for wa in ticks:
        for wb in ticks:
            if wa + wb <= 1 + 1e-9:
                best = max(best, _neg_mse(wa * a + wb * b + (1 - wa - wb) * c, y))
    return best


def test_ensemble_selection_guarantees(verdict):
    r = np.random.default_rng(2)
    t = time.perf_counter()
    below_best, grid_gaps = 0, []
    for i in range(200):
        m = int(r.integers(3, 7))
        kind = ("auc", "accuracy", "r2")[i % 3]
        if kind == "r2":
            y = r.normal(size=200)
            P = {f"m{j}": y * r.uniform(0.2, 1.2) + r.normal(scale=r.uniform(0.3, 1.5), size=200) + r.normal(0, 0.3)
                 for j in range(m)}
        else:
            y = r.integers(0, 2, 200)
            P = {}
            for j in range(m):
                logit = (2 * y - 1) * r.uniform(0.1, 2.0) + r.normal(scale=1.5, size=200)
                p1 = 1 / (1 + np.exp(-logit))
                P[f"m{j}"] = np.column_stack([1 - p1, p1])
        w = ensemble_selection(P, y, kind)
        got = score(kind, blend(P, w), y)
        if got < max(score(kind, p, y) for p in P.values()) - 1e-9:
            below_best += 1
        if m == 3:
            Q = {k: y + r.normal(scale=s, size=200) + b for k, s, b in
                 zip("abc", r.uniform(0.3, 1.2, 3), r.normal(0, 0.3, 3))}
            wq = ensemble_selection(Q, y, _neg_mse)
            grid_gaps.append(_simplex_grid_best(Q, y) - _neg_mse(blend(Q, wq), y))
    elapsed = time.perf_counter() - t
    ok = below_best == 0 and max(grid_gaps) <= 0.01 and elapsed < 120
    verdict(2, ok, f"ensemble selection: {below_best}/200 below best single; worst grid gap {max(grid_gaps):.4f} "
                   f"over {len(grid_gaps)} three-model instances, {elapsed:.1f}s")
    assert ok


# -- 3. out-of-fold leakage ------------------------------------------------

class Memorizer:
    """Predicts the label it saw for a key, else a uniform distribution."""

    def fit(self, table, task=None, classes=None):
        self.classes = list(classes)
        self.seen = dict(zip(table.column("key").tolist(), table.labels().tolist()))
        return self

    def predict(self, table):
        k = len(self.classes)
        out = np.full((table.n_rows, k), 1.0 / k)
        for i, key in enumerate(table.column("key").tolist()):
            if key in self.seen:
                out[i] = 0.0
                out[i, self.classes.index(self.seen[key])] = 1.0
        return out


class MemorizerSpec(ModelSpec):
    def __post_init__(self):
        pass

    def build(self, seed):
        return Memorizer()


def _keyed(n, seed):
    r = np.random.default_rng(seed)
    return DataTable({"key": [f"k{i}" for i in range(n)], "y": r.integers(0, 2, n)}, target="y", task="binary")


def test_oof_leakage_guard(verdict):
    t = time.perf_counter()
    spec = MemorizerSpec("ert", name="memo")
    table = _keyed(500, 0)
    y = table.labels()
    entry, folds = oof_fit(spec, table, k=5, seed=0)
    oof_acc = accuracy(entry.oof, y)
    chance = max(np.mean(y == 0), np.mean(y == 1))
    in_fold = min(accuracy(m.predict(table.take(np.flatnonzero(folds != f))), y[folds != f])
                  for f, m in enumerate(entry.models))

    r = np.random.default_rng(3)
    violations = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(1000):
            n = int(r.integers(6, 60))
            k = int(r.integers(2, min(n, 10) + 1))
            fz = r.integers(0, k, n)
            fz[r.permutation(n)[:k]] = np.arange(k)    # every fold id occurs
            small = _keyed(n, int(r.integers(0, 2**31)))
            e, _ = oof_fit(spec, small, folds=fz, classes=[0, 1])
            keys = small.column("key")
            for f, model in enumerate(e.models):
                inner = getattr(model, "model", model)
                if not set(keys[fz == f].tolist()).isdisjoint(inner.seen):
                    violations += 1
    elapsed = time.perf_counter() - t
    ok = in_fold == 1.0 and oof_acc <= chance + 0.10 and violations == 0 and elapsed < 60
    verdict(3, ok, f"OOF leakage: in-fold accuracy {in_fold:.3f}, OOF accuracy {oof_acc:.3f} (chance {chance:.3f}), "
                   f"{violations} structural violations over 1000 fuzzed assignments, {elapsed:.1f}s")
    assert ok


# -- 4. gradient checks ----------------------------------------------------

def test_gradient_checks(verdict):
    r = np.random.default_rng(4)
    merged = [merge_fields([list(r.integers(4, 24, size=r.integers(1, 6))),
                            list(r.integers(4, 24, size=r.integers(0, 4)))]) for _ in range(4)]
    num = r.normal(size=(4, 2))
    cat = np.column_stack([r.integers(0, c, 4) for c in (3, 4)])
    y = np.array([0, 1, 2, 1])
    t = time.perf_counter()
    results = {}
    for variant in VARIANTS:
        cfg = NetConfig(variant=variant, vocab_size=24, hidden_size=16, n_layers=2, n_heads=2, ffn_size=16,
                        max_length=16, n_numeric=2, cat_cardinalities=(3, 4), n_text_fields=2, output_dim=3,
                        cat_embed_units=4, cat_bottleneck=8, late_bottleneck=8, fuse_early_layers=1,
                        fuse_early_units=16, fuse_early_heads=2, fuse_early_ffn=16)
        net = build_net(cfg, seed=int(r.integers(0, 1000)))
        batch = collate(merged, num, cat)
        results[variant] = finite_difference_check(lambda: ag.cross_entropy(logits(net, batch), y), net.params,
                                                   h=1e-5)
    elapsed = time.perf_counter() - t
    worst = max(w for w, _ in results.values())
    ok = worst < 1e-4 and elapsed < 300
    detail = ", ".join(f"{v} {w:.1e}" for v, (w, _) in results.items())
    verdict(4, ok, f"gradient checks (worst per-tensor relative error): {detail}; {elapsed:.0f}s")
    assert ok


# -- 5. schedule, layer decay, checkpoint averaging ---------------------------

def test_schedule_decay_averaging(verdict):
    cfg = TrainConfig()
    total = 1000
    warm = int(np.ceil(cfg.warmup_fraction * total))
    sched_ok = lr_at(0, total, cfg) == 0.0 and lr_at(warm, total, cfg) == 5e-5 and lr_at(total, total, cfg) == 0.0

    net = build_net(NetConfig(vocab_size=30, hidden_size=16, n_layers=2, n_heads=2, ffn_size=32, max_length=32,
                              output_dim=2), seed=0)
    tau = cfg.layer_decay
    opt = AdamW(net.params, lr_scales(net, tau), weight_decay=0.0)
    for p in net.params.values():
        p.grad = np.ones_like(p.data)
    before = net.param_arrays()
    opt.step(1e-3)
    steps = {k: np.abs(net.params[k].data - before[k]).max() for k in net.params}
    L = net.depth["text.tok"]     # the embedding layer is the deepest layer
    ratio = steps["text.tok"] / steps["head.fc2.w"]
    decay_ok = L == net.config.n_layers + 1 and abs(ratio - tau ** L) < 1e-6

    r = np.random.default_rng(5)
    snaps = [{"a": r.normal(size=(7, 3)), "b": r.normal(size=11)} for _ in range(3)]
    avg = average_checkpoints(snaps)
    avg_err = max(np.abs(avg[k] - (snaps[0][k] + snaps[1][k] + snaps[2][k]) / 3).max() for k in avg)
    ok = sched_ok and decay_ok and avg_err <= 1e-12
    verdict(5, ok, f"schedule endpoints/peak {'ok' if sched_ok else 'WRONG'}; embedding/head step {ratio:.8f} vs "
                   f"tau^{L} {tau ** L:.8f}; checkpoint mean error {avg_err:.1e}")
    assert ok


# -- 6. truncation fuzz ------------------------------------------------------

def test_truncation_fuzz(verdict):
    r = np.random.default_rng(6)
    bad = 0
    t = time.perf_counter()
    for i in range(10_000):
        k = int(r.integers(1, 12))
        scale = (20, 200, 1000)[i % 3]
        lengths = r.integers(0, scale, k).tolist()
        final = np.array(truncate_lengths(lengths))
        orig = np.array(lengths)
        shrunk = final < orig
        fits = 1 + final.sum() + k <= 512
        exact = (orig == final).all() if 1 + orig.sum() + k <= 512 else 1 + final.sum() + k == 512
        # a field loses a token only while it is the longest, so a shrunk field
        # ends at most one below every final length and never grows
        leveled = all(final[j] + 1 >= final.max() for j in np.flatnonzero(shrunk))
        if not (fits and exact and leveled and (final <= orig).all()):
            bad += 1
            continue
        if i % 10 == 0:    # full layout check on a tenth of the cases
            fields = [list(r.integers(4, 100, n)) for n in lengths]
            m = merge_fields(fields)
            segs = np.array(m.segment_ids)
            if len(m) > 512 or any((segs[s:e + 1] != j % 2).any() for j, (s, e) in enumerate(m.field_spans)):
                bad += 1
    elapsed = time.perf_counter() - t
    ok = bad == 0
    verdict(6, ok, f"truncation fuzz: {bad}/10000 violations, {elapsed:.1f}s")
    assert ok


# -- 7. interaction signal -------------------------------------------------

def test_interaction_reproduction(verdict):
    pool, test = gen_synthetic(SyntheticSpec(n_rows=5000, signal_allocation=(0, 0, 1), noise=0.1, seed=7,
                                             name="xor"))
    t = time.perf_counter()
    acc = {m: [] for m in ("fuse_late", "text_net", "tab_stack")}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed in range(5):
            train, val = split_train_val(pool, SplitSpec(0.1, seed))
            for m in acc:
                fitted = fit_strategy(m, train, val, seed)
                acc[m].append(accuracy(fitted.predict(test), fitted.label_encoder.transform(test.labels())))
    elapsed = time.perf_counter() - t
    mean = {m: float(np.mean(v)) for m, v in acc.items()}
    ok = mean["fuse_late"] >= 0.85 and mean["text_net"] <= 0.65 and mean["tab_stack"] <= 0.65 and elapsed < 900
    detail = "; ".join(f"{m} {mean[m]:.3f} [{min(v):.3f}-{max(v):.3f}]" for m, v in acc.items())
    verdict(7, ok, f"XOR synthetic, {pool.n_rows} train rows, 5 seeds, mean test accuracy: {detail}; {elapsed:.0f}s")
    assert ok


# -- 8. aggregation ordering -----------------------------------------------

REGIMES = [(1, 0, 0), (0, 1, 0), (0.5, 0.5, 0), (0.7, 0.3, 0), (0.3, 0.7, 0), (0.4, 0.3, 0.3), (0.2, 0.2, 0.6),
           (0, 0.5, 0.5)]


def test_aggregation_ordering(verdict, tmp_path):
    datasets = []
    for i, alloc in enumerate(REGIMES):
        tr, te = gen_synthetic(SyntheticSpec(n_rows=1250, signal_allocation=alloc, seed=100 + i, name=f"s{i}"))
        write_csv(tr, tmp_path / f"s{i}_train.csv")
        write_csv(te, tmp_path / f"s{i}_test.csv")
        datasets.append({"name": f"s{i}", "path": f"s{i}_train.csv", "test_path": f"s{i}_test.csv",
                         "target": "label", "task": "binary"})
    cfg = RunConfig.from_dict({"datasets": datasets, "seeds": [0, 1, 2],
                               "strategies": ["pre_embedding", "text_embedding", "weighted_ensemble",
                                              "stack_ensemble"]}, base_dir=str(tmp_path))
    t = time.perf_counter()
    res = run(cfg, out_dir=tmp_path / "out")
    elapsed = time.perf_counter() - t
    assert res.exit_code == 0, res.errors

    # seed-averaged test score per (method, dataset); base models come from the
    # weighted ensemble's members, each scored alone on the same test split
    cells: dict[tuple[str, str], list[float]] = {}
    for rec in res.records:
        cells.setdefault((rec["method"], rec["dataset"]), []).append(rec["score"])
        if rec["method"] == "weighted_ensemble":
            for base, s in rec["extras"].items():
                cells.setdefault((f"base:{base}", rec["dataset"]), []).append(s)
    scores = {k: float(np.mean(v)) for k, v in cells.items()}
    ranked = {k: v for k, v in scores.items() if k[0] in ("stack_ensemble", "weighted_ensemble")
              or k[0].startswith("base:")}
    ranks = mean_ranks(ranked)
    bases = {m: v for m, v in ranks.items() if m.startswith("base:")}
    best_base = min(bases, key=bases.get)
    avg = {m: float(np.mean([s for (mm, _), s in scores.items() if mm == m]))
           for m in ("pre_embedding", "text_embedding")}
    order_ok = ranks["stack_ensemble"] <= ranks["weighted_ensemble"] <= bases[best_base]
    emb_ok = avg["text_embedding"] >= avg["pre_embedding"]
    ok = order_ok and emb_ok and elapsed < 2700
    verdict(8, ok, f"{len(REGIMES)} regimes x 3 seeds, mean rank: stack {ranks['stack_ensemble']:.2f}, weighted "
                   f"{ranks['weighted_ensemble']:.2f}, best single ({best_base[5:]}) {bases[best_base]:.2f}; avg AUC "
                   f"text_embedding {avg['text_embedding']:.3f} vs pre_embedding {avg['pre_embedding']:.3f}; "
                   f"{elapsed / 60:.1f} min")
    assert ok


# -- 9. permutation importance ----------------------------------------------

class CopyColumn:
    """Predicts exactly the values of one column."""

    def __init__(self, column):
        self.column = column

    def predict(self, table):
        return table.column(self.column).astype(np.float64)


def test_permutation_importance(verdict):
    r = np.random.default_rng(9)
    n = 1000
    a, b = r.normal(size=n), r.normal(size=n)
    test = DataTable({"a": a, "b": b, "y": a + 0.1 * r.normal(size=n)}, target="y", task="regression")
    model = CopyColumn("a")
    imp_a = permutation_importance(model, test, "a", "r2", repeats=5, seed=0)
    imp_b = permutation_importance(model, test, "b", "r2", repeats=5, seed=0)
    ok = abs(imp_b) <= 0.01 and imp_a >= 0.5
    verdict(9, ok, f"permutation importance (R2, n=1000, 5 repeats): copied column {imp_a:.3f}, "
                   f"ignored column {imp_b:.3f}")
    assert ok


# -- 10. determinism ---------------------------------------------------------

def test_cli_determinism(verdict, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(SyntheticSpec(n_rows=300, signal_allocation=(0.4, 0.3, 0.3), seed=10, name="det").to_json())
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "data")]) == 0
    config = {"datasets": [{"name": "det", "path": "data/train.csv", "test_path": "data/test.csv",
                            "target": "label", "task": "binary"}],
              "strategies": ["fuse_late", "text_embedding", "weighted_ensemble", "stack_ensemble", "tab_stack_ngram"],
              "seeds": [0, 1],
              "options": {"train": {"epochs": 2}, "k": 3, "tabular_models": ["ert", "gbm_b"],
                          "net": {"hidden_size": 16, "n_layers": 1, "n_heads": 2, "ffn_size": 32}}}
    (tmp_path / "config.json").write_text(json.dumps(config))
    outputs = []
    for i, workers in enumerate(("1", "1", "2")):
        out = tmp_path / f"run{i}"
        assert main(["run", "--config", str(tmp_path / "config.json"), "--out", str(out), "--workers", workers]) == 0
        outputs.append((out / "results.csv").read_bytes())
    ok = outputs[0] == outputs[1] == outputs[2]
    verdict(10, ok, f"CLI determinism: {len(outputs)} runs (serial, serial, 2 workers) "
                    f"{'byte-identical' if ok else 'DIFFER'} ({len(outputs[0])} bytes)")
    assert ok
