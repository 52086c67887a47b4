"""Tree growing and traversal kernels.

Every kernel exists twice: a scalar-loop version compiled with numba and a
vectorized numpy version.  ``MMTAB_DISABLE_NUMBA=1`` selects the numpy path.
Both grow identical trees from the same inputs; randomness comes in as a
pre-drawn uniform matrix indexed by node id, so neither path owns an RNG.

One grower covers all tree models.  Rows carry a target matrix ``G`` (n, K)
and a weight matrix ``H`` (n, K); a node's value is ``G_sum / (H_sum + lam)``
and a split is scored by ``sum_k G_k**2 / (H_k + lam)`` over both children.
With one-hot ``G`` and unit ``H`` that is Gini reduction and leaves hold class
frequencies, with ``G = y`` it is variance reduction, and with negative
gradients and hessians it is the Newton boosting gain.
"""
from __future__ import annotations

import numpy as np

from .._accel import HAVE_NUMBA, jit

RANDOM, EXACT, HIST = 0, 1, 2


def _leaf_score(g, h, lam):
    s = 0.0
    for k in range(g.shape[0]):
        d = h[k] + lam
        if d > 0:
            s += g[k] * g[k] / d
    return s


def _grow_loop(X, is_cat, G, H, rows, mode, min_leaf, max_depth, n_try, U, lam, min_hess, min_gain, n_bins,
               feature, threshold, left, right, value):
    n, p = X.shape
    K = G.shape[1]
    cap = feature.shape[0]
    st_node = np.empty(cap, np.int64)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    st_d = np.empty(cap, np.int64)
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = rows.shape[0]
    st_d[0] = 0
    top = 1
    n_nodes = 1
    gt = np.empty(K)
    ht = np.empty(K)
    gl = np.empty(K)
    hl = np.empty(K)
    gr = np.empty(K)
    hr = np.empty(K)
    vals = np.empty(rows.shape[0])
    idx = np.empty(rows.shape[0], np.int64)
    tmp = np.empty(rows.shape[0], np.int64)
    bin_g = np.empty((max(n_bins, 1), K))
    bin_h = np.empty((max(n_bins, 1), K))
    bin_c = np.empty(max(n_bins, 1), np.int64)
    while top > 0:
        top -= 1
        node = st_node[top]
        s = st_s[top]
        e = st_e[top]
        d = st_d[top]
        m = e - s
        for k in range(K):
            gt[k] = 0.0
            ht[k] = 0.0
        for i in range(s, e):
            r = rows[i]
            for k in range(K):
                gt[k] += G[r, k]
                ht[k] += H[r, k]
        for k in range(K):
            den = ht[k] + lam
            value[node, k] = gt[k] / den if den > 0 else 0.0
        feature[node] = -1
        if m < 2 * min_leaf or (max_depth >= 0 and d >= max_depth):
            continue
        if mode == RANDOM:
            pure = True
            r0 = rows[s]
            for i in range(s + 1, e):
                r = rows[i]
                for k in range(K):
                    if G[r, k] != G[r0, k]:
                        pure = False
                        break
                if not pure:
                    break
            if pure:
                continue
        parent = _leaf_score(gt, ht, lam)
        best_gain = min_gain
        best_f = -1
        best_t = 0.0
        if mode == RANDOM:
            order = np.argsort(U[node, :p], kind="mergesort")
            tried = 0
            for j in range(p):
                f = order[j]
                mn = np.inf
                mx = -np.inf
                for i in range(s, e):
                    v = X[rows[i], f]
                    if v < mn:
                        mn = v
                    if v > mx:
                        mx = v
                if mn == mx:
                    continue
                if is_cat[f]:
                    pick = int(U[node, p + f] * m)
                    if pick >= m:
                        pick = m - 1
                    t = X[rows[s + pick], f]
                else:
                    t = mn + U[node, p + f] * (mx - mn)
                    if t >= mx:
                        t = mn
                for k in range(K):
                    gl[k] = 0.0
                    hl[k] = 0.0
                nl = 0
                for i in range(s, e):
                    r = rows[i]
                    v = X[r, f]
                    if (v == t) if is_cat[f] else (v <= t):
                        nl += 1
                        for k in range(K):
                            gl[k] += G[r, k]
                            hl[k] += H[r, k]
                for k in range(K):
                    gr[k] = gt[k] - gl[k]
                    hr[k] = ht[k] - hl[k]
                gain = _leaf_score(gl, hl, lam) + _leaf_score(gr, hr, lam) - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = t
                tried += 1
                if tried >= n_try:
                    break
        elif mode == EXACT:
            for f in range(p):
                for i in range(m):
                    idx[i] = rows[s + i]
                    vals[i] = X[idx[i], f]
                if is_cat[f]:
                    n_cat = 0
                    for i in range(m):
                        c = int(vals[i]) + 1
                        if c > n_cat:
                            n_cat = c
                    cg = np.zeros((n_cat, K))
                    ch = np.zeros((n_cat, K))
                    cc = np.zeros(n_cat, np.int64)
                    for i in range(m):
                        c = int(vals[i])
                        cc[c] += 1
                        for k in range(K):
                            cg[c, k] += G[idx[i], k]
                            ch[c, k] += H[idx[i], k]
                    for c in range(n_cat):
                        if cc[c] < min_leaf or m - cc[c] < min_leaf:
                            continue
                        hs_l = 0.0
                        hs_r = 0.0
                        for k in range(K):
                            gl[k] = cg[c, k]
                            hl[k] = ch[c, k]
                            gr[k] = gt[k] - gl[k]
                            hr[k] = ht[k] - hl[k]
                            hs_l += hl[k]
                            hs_r += hr[k]
                        if hs_l < min_hess or hs_r < min_hess:
                            continue
                        gain = _leaf_score(gl, hl, lam) + _leaf_score(gr, hr, lam) - parent
                        if gain > best_gain:
                            best_gain = gain
                            best_f = f
                            best_t = float(c)
                else:
                    order = np.argsort(vals[:m], kind="mergesort")
                    for k in range(K):
                        gl[k] = 0.0
                        hl[k] = 0.0
                    for i in range(m - 1):
                        r = idx[order[i]]
                        hs_l = 0.0
                        hs_r = 0.0
                        for k in range(K):
                            gl[k] += G[r, k]
                            hl[k] += H[r, k]
                        v0 = vals[order[i]]
                        v1 = vals[order[i + 1]]
                        if not v0 < v1 or i + 1 < min_leaf or m - i - 1 < min_leaf:
                            continue
                        for k in range(K):
                            gr[k] = gt[k] - gl[k]
                            hr[k] = ht[k] - hl[k]
                            hs_l += hl[k]
                            hs_r += hr[k]
                        if hs_l < min_hess or hs_r < min_hess:
                            continue
                        gain = _leaf_score(gl, hl, lam) + _leaf_score(gr, hr, lam) - parent
                        if gain > best_gain:
                            best_gain = gain
                            best_f = f
                            t = v0 + 0.5 * (v1 - v0)
                            best_t = t if t < v1 else v0
        else:
            for f in range(p):
                bin_g[:, :] = 0.0
                bin_h[:, :] = 0.0
                bin_c[:] = 0
                for i in range(s, e):
                    r = rows[i]
                    b = int(X[r, f])
                    bin_c[b] += 1
                    for k in range(K):
                        bin_g[b, k] += G[r, k]
                        bin_h[b, k] += H[r, k]
                for k in range(K):
                    gl[k] = 0.0
                    hl[k] = 0.0
                nl = 0
                for b in range(n_bins - 1):
                    nl += bin_c[b]
                    for k in range(K):
                        gl[k] += bin_g[b, k]
                        hl[k] += bin_h[b, k]
                    if bin_c[b] == 0 or nl < min_leaf or m - nl < min_leaf:
                        continue
                    hs_l = 0.0
                    hs_r = 0.0
                    for k in range(K):
                        gr[k] = gt[k] - gl[k]
                        hr[k] = ht[k] - hl[k]
                        hs_l += hl[k]
                        hs_r += hr[k]
                    if hs_l < min_hess or hs_r < min_hess:
                        continue
                    gain = _leaf_score(gl, hl, lam) + _leaf_score(gr, hr, lam) - parent
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_t = float(b)
        if best_f < 0:
            continue
        # stable partition: left rows first, original order kept on each side
        nl = 0
        nr = 0
        cat = is_cat[best_f]
        for i in range(s, e):
            r = rows[i]
            v = X[r, best_f]
            if (v == best_t) if cat else (v <= best_t):
                rows[s + nl] = r
                nl += 1
            else:
                tmp[nr] = r
                nr += 1
        for i in range(nr):
            rows[s + nl + i] = tmp[i]
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top] = n_nodes + 1
        st_s[top] = s + nl
        st_e[top] = e
        st_d[top] = d + 1
        st_node[top + 1] = n_nodes
        st_s[top + 1] = s
        st_e[top + 1] = s + nl
        st_d[top + 1] = d + 1
        top += 2
        n_nodes += 2
    return n_nodes


def _predict_loop(X, is_cat, feature, threshold, left, right, value, out, scale):
    n = X.shape[0]
    K = value.shape[1]
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            f = feature[node]
            v = X[i, f]
            if (v == threshold[node]) if is_cat[f] else (v <= threshold[node]):
                node = left[node]
            else:
                node = right[node]
        for k in range(K):
            out[i, k] += scale * value[node, k]


# -- numpy path ------------------------------------------------------------

def _scores_np(g, h, lam):
    den = h + lam
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, g * g / safe, 0.0).sum(axis=-1)


def _best_of(gains, valid, best_gain):
    gains = np.where(valid, gains, -np.inf)
    if gains.size == 0:
        return -1, best_gain
    j = int(np.argmax(gains))
    if gains[j] > best_gain:
        return j, float(gains[j])
    return -1, best_gain


def _grow_vec(X, is_cat, G, H, rows, mode, min_leaf, max_depth, n_try, U, lam, min_hess, min_gain, n_bins,
              feature, threshold, left, right, value):
    n, p = X.shape
    K = G.shape[1]
    stack = [(0, 0, rows.shape[0], 0)]
    n_nodes = 1
    while stack:
        node, s, e, d = stack.pop()
        m = e - s
        idx = rows[s:e]
        Gn, Hn = G[idx], H[idx]
        gt = np.cumsum(Gn, axis=0)[-1]
        ht = np.cumsum(Hn, axis=0)[-1]
        den = ht + lam
        value[node] = np.where(den > 0, gt / np.where(den > 0, den, 1.0), 0.0)
        feature[node] = -1
        if m < 2 * min_leaf or (max_depth >= 0 and d >= max_depth):
            continue
        if mode == RANDOM and np.all(Gn == Gn[0]):
            continue
        parent = _scores_np(gt, ht, lam)
        best_gain, best_f, best_t = min_gain, -1, 0.0
        Xn = X[idx]
        if mode == RANDOM:
            tried = 0
            for f in np.argsort(U[node, :p], kind="mergesort"):
                col = Xn[:, f]
                mn, mx = col.min(), col.max()
                if mn == mx:
                    continue
                if is_cat[f]:
                    t = col[min(int(U[node, p + f] * m), m - 1)]
                    mask = col == t
                else:
                    t = mn + U[node, p + f] * (mx - mn)
                    if t >= mx:
                        t = mn
                    mask = col <= t
                gl = Gn[mask].sum(axis=0)
                hl = Hn[mask].sum(axis=0)
                gain = _scores_np(gl, hl, lam) + _scores_np(gt - gl, ht - hl, lam) - parent
                if gain > best_gain:
                    best_gain, best_f, best_t = gain, int(f), float(t)
                tried += 1
                if tried >= n_try:
                    break
        elif mode == EXACT:
            for f in range(p):
                col = Xn[:, f]
                if is_cat[f]:
                    codes = col.astype(np.int64)
                    n_cat = int(codes.max()) + 1
                    cg = np.zeros((n_cat, K))
                    ch = np.zeros((n_cat, K))
                    np.add.at(cg, codes, Gn)
                    np.add.at(ch, codes, Hn)
                    cc = np.bincount(codes, minlength=n_cat)
                    gr, hr = gt - cg, ht - ch
                    valid = ((cc >= min_leaf) & (m - cc >= min_leaf) & (ch.sum(axis=1) >= min_hess)
                             & (hr.sum(axis=1) >= min_hess))
                    gains = _scores_np(cg, ch, lam) + _scores_np(gr, hr, lam) - parent
                    j, best_gain2 = _best_of(gains, valid, best_gain)
                    if j >= 0:
                        best_gain, best_f, best_t = best_gain2, f, float(j)
                else:
                    order = np.argsort(col, kind="mergesort")
                    v = col[order]
                    cg = np.cumsum(Gn[order], axis=0)[:-1]
                    ch = np.cumsum(Hn[order], axis=0)[:-1]
                    cnt = np.arange(1, m)
                    gr, hr = gt - cg, ht - ch
                    valid = ((v[:-1] < v[1:]) & (cnt >= min_leaf) & (m - cnt >= min_leaf)
                             & (ch.sum(axis=1) >= min_hess) & (hr.sum(axis=1) >= min_hess))
                    gains = _scores_np(cg, ch, lam) + _scores_np(gr, hr, lam) - parent
                    j, best_gain2 = _best_of(gains, valid, best_gain)
                    if j >= 0:
                        v0, v1 = v[j], v[j + 1]
                        t = v0 + 0.5 * (v1 - v0)
                        best_gain, best_f, best_t = best_gain2, f, float(t if t < v1 else v0)
        else:
            for f in range(p):
                codes = Xn[:, f].astype(np.int64)
                bg = np.zeros((n_bins, K))
                bh = np.zeros((n_bins, K))
                np.add.at(bg, codes, Gn)
                np.add.at(bh, codes, Hn)
                bc = np.bincount(codes, minlength=n_bins)
                cg = np.cumsum(bg, axis=0)[:-1]
                ch = np.cumsum(bh, axis=0)[:-1]
                cnt = np.cumsum(bc)[:-1]
                gr, hr = gt - cg, ht - ch
                valid = ((bc[:-1] > 0) & (cnt >= min_leaf) & (m - cnt >= min_leaf)
                         & (ch.sum(axis=1) >= min_hess) & (hr.sum(axis=1) >= min_hess))
                gains = _scores_np(cg, ch, lam) + _scores_np(gr, hr, lam) - parent
                j, best_gain2 = _best_of(gains, valid, best_gain)
                if j >= 0:
                    best_gain, best_f, best_t = best_gain2, f, float(j)
        if best_f < 0:
            continue
        col = Xn[:, best_f]
        mask = (col == best_t) if is_cat[best_f] else (col <= best_t)
        nl = int(mask.sum())
        rows[s:e] = np.concatenate([idx[mask], idx[~mask]])
        feature[node], threshold[node] = best_f, best_t
        left[node], right[node] = n_nodes, n_nodes + 1
        stack.append((n_nodes + 1, s + nl, e, d + 1))
        stack.append((n_nodes, s, s + nl, d + 1))
        n_nodes += 2
    return n_nodes


def _predict_vec(X, is_cat, feature, threshold, left, right, value, out, scale):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        r, nd = rows[active], node[active]
        f = feature[nd]
        v = X[r, f]
        go_left = np.where(is_cat[f], v == threshold[nd], v <= threshold[nd])
        node[r] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    out += scale * value[node]


if HAVE_NUMBA:
    _leaf_score = jit(_leaf_score)
    _grow_nb = jit(_grow_loop)
    _predict_nb = jit(_predict_loop)
else:
    _grow_nb = _predict_nb = None


class Tree:
    """Flat-array binary tree; ``feature == -1`` marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def arrays(self):
        return self.feature, self.threshold, self.left, self.right, self.value


def grow_tree(X, is_cat, G, H, *, mode=EXACT, min_leaf=1, max_depth=-1, n_try=0, U=None, lam=0.0,
              min_hess=0.0, min_gain=-np.inf, n_bins=0, use_numba: bool | None = None) -> Tree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    G = np.ascontiguousarray(G, dtype=np.float64)
    H = np.ascontiguousarray(H, dtype=np.float64)
    is_cat = np.ascontiguousarray(is_cat, dtype=np.bool_)
    n, K = G.shape
    if n == 0:
        raise ValueError("cannot grow a tree on zero rows")
    cap = 2 * n + 1
    if U is None:
        U = np.zeros((1, 2 * X.shape[1]))
    elif mode == RANDOM and U.shape[0] < cap:
        raise ValueError("uniform matrix needs one row per potential node")
    if mode == HIST:
        codes = X[:, ~is_cat]
        if codes.size and (codes.min() < 0 or codes.max() >= n_bins or np.any(codes != np.floor(codes))):
            raise ValueError(f"histogram mode needs integer bin codes in [0, {n_bins})")
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, K))
    rows = np.arange(n, dtype=np.int64)
    fn = _pick(_grow_nb, _grow_vec, use_numba)
    count = fn(X, is_cat, G, H, rows, mode, min_leaf, max_depth, n_try, np.ascontiguousarray(U, dtype=np.float64),
               float(lam), float(min_hess), float(min_gain), int(n_bins), feature, threshold, left, right, value)
    return Tree(feature[:count].copy(), threshold[:count].copy(), left[:count].copy(), right[:count].copy(),
                value[:count].copy())


def predict_tree(tree: Tree, X, is_cat, out=None, scale: float = 1.0, use_numba: bool | None = None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if out is None:
        out = np.zeros((X.shape[0], tree.value.shape[1]))
    if X.shape[0] == 0:
        return out
    fn = _pick(_predict_nb, _predict_vec, use_numba)
    fn(X, np.ascontiguousarray(is_cat, dtype=np.bool_), *tree.arrays(), out, float(scale))
    return out


def _pick(nb, vec, use_numba):
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and nb is None:
        raise RuntimeError("numba path requested but numba is unavailable")
    return nb if use_numba else vec
