"""Time the tree kernels on the numba and numpy paths.

    python3 benchmarks/bench_kernels.py --rows 20000 --features 10 --repeats 3

Both paths must grow the same tree; the script checks that before timing.
"""
import argparse
import time

import numpy as np

from mmtab._accel import HAVE_NUMBA
from mmtab.tabmodels.kernels import EXACT, HIST, RANDOM, grow_tree, predict_tree


def _data(n, p, seed=0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, p))
    y = np.sin(X[:, 0]) + X[:, 1] * (X[:, 2] > 0) + 0.1 * r.normal(size=n)
    codes = np.empty_like(X)
    for j in range(p):
        edges = np.quantile(X[:, j], np.linspace(0, 1, 64)[1:-1])
        codes[:, j] = np.searchsorted(edges, X[:, j])
    return X, codes, y[:, None], np.ones((n, 1))


def _best(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--features", type=int, default=10)
    ap.add_argument("--depth", type=int, default=6)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not importable; only the numpy path would run")

    X, codes, G, H = _data(args.rows, args.features)
    is_cat = np.zeros(args.features, dtype=bool)
    U = np.random.default_rng(1).random((2 * args.rows + 1, 2 * args.features))
    cases = {
        "random": (X, dict(mode=RANDOM, U=U, n_try=1, min_leaf=5, max_depth=args.depth)),
        "exact": (X, dict(mode=EXACT, min_leaf=5, max_depth=args.depth)),
        "hist": (codes, dict(mode=HIST, n_bins=64, min_leaf=5, max_depth=args.depth)),
    }
    print(f"rows={args.rows} features={args.features} depth={args.depth} (best of {args.repeats})")
    print(f"{'kernel':<14}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for name, (data, kw) in cases.items():
        a = grow_tree(data, is_cat, G, H, use_numba=True, **kw)     # also compiles
        b = grow_tree(data, is_cat, G, H, use_numba=False, **kw)
        assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays())), name
        t_nb = _best(lambda: grow_tree(data, is_cat, G, H, use_numba=True, **kw), args.repeats)
        t_np = _best(lambda: grow_tree(data, is_cat, G, H, use_numba=False, **kw), args.repeats)
        print(f"{'grow/' + name:<14}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>8.1f}x")
        predict_tree(a, data, is_cat, use_numba=True)
        t_nb = _best(lambda: predict_tree(a, data, is_cat, use_numba=True), args.repeats)
        t_np = _best(lambda: predict_tree(a, data, is_cat, use_numba=False), args.repeats)
        print(f"{'predict/' + name:<14}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
