"""Shared test data and numeric oracles."""
import numpy as np

from mmtab.frame import DataTable


def make_table(n=200, seed=0, task="binary", text=True, n_classes=2):
    """Small mixed table whose label depends on num_0 and a keyword in text_0."""
    r = np.random.default_rng(seed)
    x = r.normal(size=n)
    level = r.integers(0, 4, size=n)
    good = r.random(n) < 0.5
    words = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "theta"]
    texts = [" ".join(r.choice(words, 5)) + (" great" if g else " meh") for g in good]
    score = x + 1.5 * good + 0.3 * level
    if task == "regression":
        y = score + 0.1 * r.normal(size=n)
    elif task == "binary":
        y = (score > np.median(score)).astype(int)
    else:
        y = np.searchsorted(np.quantile(score, np.linspace(0, 1, n_classes + 1)[1:-1]), score)
    cols = {"num_0": x, "num_1": r.normal(size=n), "cat_0": [f"l{v}" for v in level]}
    if text:
        cols["text_0"] = texts
    cols["y"] = y
    return DataTable(cols, name="toy", target="y", task=task)


def keyword_table(n=500, seed=0, extra_numeric=True):
    """Binary label fully determined by whether the text mentions "great"."""
    r = np.random.default_rng(seed)
    words = ["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "theta", "zeta", "eta"]
    y = r.integers(0, 2, n)
    texts = []
    for lab in y:
        toks = list(r.choice(words, 6))
        toks.insert(int(r.integers(0, 7)), "great" if lab else "poor")
        texts.append(" ".join(toks))
    cols = {"text_0": texts}
    if extra_numeric:
        cols["num_0"] = r.normal(size=n)
    cols["y"] = y
    return DataTable(cols, name="kw", target="y", task="binary")


def finite_difference_check(loss, params, h=1e-5, floor=1e-6):
    """Largest per-tensor relative error between reverse-mode and central
    finite-difference gradients, over every entry of every parameter."""
    for p in params.values():
        p.grad = None
    loss().backward()
    worst, where = 0.0, None
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(loss().data)
            flat[i] = old - h
            down = float(loss().data)
            flat[i] = old
            num[i] = (up - down) / (2 * h)
        a = g.reshape(-1)
        rel = np.linalg.norm(a - num) / max(np.linalg.norm(a), np.linalg.norm(num), floor)
        if rel > worst:
            worst, where = rel, name
    return worst, where
